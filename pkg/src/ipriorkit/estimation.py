"""Hyperparameter estimation by multi-start marginal-likelihood maximization.

The likelihood surface in (log scale, log noise precision) typically has
two ridges and numerically rough patches, so the default search is a
derivative-free simplex from a grid of starts spanning several orders of
magnitude, followed by deduplication of the surviving local maxima.
Cross-validation picks among maxima (and among kernel hyperparameters,
for which the maximum of the marginal likelihood is often out of
numerical reach).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import IPriorModel, MarginalProfile, NumericalBreakdown
from .error_models import ErrorModel
from .kernels import Kernel, as_rows

__all__ = [
    "FitConfig",
    "LocalMaximum",
    "fit_ml",
    "select_by_cv",
    "select_kernel_hyper",
    "maximize_multistart",
    "fit_report",
]

# hard search envelope in log-space; beyond this the likelihood overflows anyway
ENVELOPE = 30.0
_PENALTY = 1e300

DEFAULT_START_AXIS = (-6.0, -3.0, 0.0, 3.0, 6.0)


def default_start_grid(axis: Sequence[float] = DEFAULT_START_AXIS) -> tuple:
    return tuple((a, b) for a in axis for b in axis)


@dataclass(frozen=True)
class FitConfig:
    """Search settings for the (log scale, log precision) maximization.

    method "simplex" (default, derivative-free: the surface has numerically
    rough regions) or "gradient" (L-BFGS with the analytic gradient, fine on
    the smooth spectral path).
    """

    starts: tuple = field(default_factory=default_start_grid)
    max_evals: int = 500
    tol: float = 1e-6
    xtol: float = 1e-5
    folds: int = 10
    seed: int = 0
    dedup_tol: float = 1e-3
    method: str = "simplex"

    def __post_init__(self):
        if len(self.starts) == 0:
            raise ValueError("start grid must be non-empty")
        if self.folds < 2:
            raise ValueError(f"cross-validation needs K >= 2 folds, got {self.folds}")
        if self.method not in ("simplex", "gradient"):
            raise ValueError(f"unknown optimizer method {self.method!r}")


@dataclass
class LocalMaximum:
    """One surviving local maximum of the marginal likelihood."""

    params: np.ndarray          # log-space coordinates
    loglik: float
    boundary: bool
    start_index: int
    n_evals: int

    @property
    def log_scale(self) -> float:
        return float(self.params[0])

    @property
    def log_psi(self) -> float:
        return float(self.params[1])


def maximize_multistart(fn: Callable[[np.ndarray], float], starts,
                        max_evals: int = 500, tol: float = 1e-6,
                        xtol: float = 1e-5, dedup_tol: float = 1e-3,
                        envelope: float = ENVELOPE) -> tuple[list[LocalMaximum], int]:
    """Run a Nelder-Mead ascent of fn from every start and merge the maxima.

    Non-finite objective values are treated as arbitrarily bad, not as
    errors.  Maxima closer than dedup_tol in parameter space are merged
    (keeping the best value); the result is sorted by value, ties broken
    lexicographically on the parameters, which makes the output invariant
    to permutations of the start list.  Returns (maxima, failed starts).
    """

    def neg(x):
        if np.any(np.abs(x) > envelope):
            return _PENALTY
        val = fn(np.asarray(x, dtype=float))
        if not np.isfinite(val):
            return _PENALTY
        return -val

    found = []
    diagnostics = []
    for idx, x0 in enumerate(starts):
        x0 = np.asarray(x0, dtype=float)
        res = minimize(
            neg, x0, method="Nelder-Mead",
            options={"maxfev": max_evals, "fatol": tol, "xatol": xtol, "disp": False},
        )
        if res.fun >= _PENALTY:
            diagnostics.append((idx, tuple(x0), float(res.fun)))
            continue
        found.append((np.asarray(res.x, dtype=float), -float(res.fun), idx, int(res.nfev)))
    if not found:
        worst = "; ".join(f"start {i} at {s}: objective {v:.3g}" for i, s, v in diagnostics[:5])
        raise NumericalBreakdown(
            f"no start produced a finite log-likelihood ({len(diagnostics)} failures: {worst})"
        )

    # merge near-duplicates, keep the best representative
    merged: list[list] = []
    for x, val, idx, nev in sorted(found, key=lambda t: (-t[1], tuple(t[0]))):
        for m in merged:
            if np.linalg.norm(x - m[0]) < dedup_tol:
                break
        else:
            merged.append([x, val, idx, nev])
    maxima = [
        LocalMaximum(params=x, loglik=val, boundary=False, start_index=idx, n_evals=nev)
        for x, val, idx, nev in merged
    ]
    maxima.sort(key=lambda m: (-m.loglik, tuple(m.params)))

    # boundary probes: still-improving or flat directions mean the "maximum"
    # is a ridge/plateau stop, not an interior optimum
    for m in maxima:
        flags = []
        for j in range(m.params.size):
            for step in (-3.0, 3.0):
                probe = m.params.copy()
                probe[j] += step
                val = -neg(probe)
                if val > m.loglik + 10.0 * tol:
                    flags.append("improves")
                elif j == 0 and step < 0 and abs(val - m.loglik) <= max(tol, 1e-9 * abs(m.loglik)):
                    flags.append("flat-left")
        near_edge = bool(np.any(np.abs(m.params) > envelope - 1.0))
        m.boundary = bool(flags) or near_edge
    return maxima, len(diagnostics)


def fit_ml(kernel: Kernel, error: ErrorModel, X, y,
           config: FitConfig | None = None, prior_mean="mean",
           center: bool = False) -> tuple[IPriorModel, list[LocalMaximum]]:
    """Maximize the marginal likelihood over (log scale, log precision).

    Returns the model refit at the best maximum plus all surviving local
    maxima sorted by likelihood.  The error model's correlation
    parameters stay fixed; only its innovation precision moves.
    """
    config = config or FitConfig()
    X = as_rows(X)
    y = np.asarray(y, dtype=float)
    probe = IPriorModel(kernel, error, 1.0, X, y, prior_mean=prior_mean, center=center)
    profile = probe.profile

    maxima, _ = maximize_multistart(
        lambda t: profile.loglik_safe(t[0], t[1]),
        config.starts, max_evals=config.max_evals, tol=config.tol,
        xtol=config.xtol, dedup_tol=config.dedup_tol,
    )
    best = maxima[0]
    fitted = IPriorModel(
        kernel,
        error.with_innovation_precision(float(np.exp(best.log_psi))),
        float(np.exp(best.log_scale)),
        X, y, prior_mean=prior_mean, center=center,
    )
    return fitted, maxima


def _fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(order[k::folds]) for k in range(folds)]


def cv_rmse(kernel: Kernel, error: ErrorModel, X, y, scale: float, psi: float,
            folds: int = 10, seed: int = 0, prior_mean="mean",
            center: bool = False) -> float:
    """K-fold out-of-sample RMSE at fixed hyperparameters."""
    X = as_rows(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if folds > n // 2:
        raise ValueError(f"{folds} folds over {n} points leaves folds with < 2 points")
    err = error.with_innovation_precision(psi)
    sq = 0.0
    for val_idx in _fold_assignment(n, folds, seed):
        mask = np.ones(n, dtype=bool)
        mask[val_idx] = False
        model = IPriorModel(
            kernel, err, scale, X[mask], y[mask], prior_mean=prior_mean, center=center
        )
        pred = model.predict(X[val_idx])
        sq += float(np.sum((pred - y[val_idx]) ** 2))
    return float(np.sqrt(sq / n))


def select_by_cv(maxima: list[LocalMaximum], kernel: Kernel, error: ErrorModel,
                 X, y, config: FitConfig | None = None, prior_mean="mean",
                 center: bool = False):
    """Pick the local maximum with the smallest CV RMSE (ties favour likelihood).

    Returns (chosen maximum, table of (maximum, cv_rmse)).
    """
    if not maxima:
        raise ValueError("need at least one local maximum")
    config = config or FitConfig()
    table = []
    for m in maxima:
        rmse = cv_rmse(
            kernel, error, X, y,
            scale=float(np.exp(m.log_scale)), psi=float(np.exp(m.log_psi)),
            folds=config.folds, seed=config.seed,
            prior_mean=prior_mean, center=center,
        )
        table.append((m, rmse))
    chosen = min(table, key=lambda t: (t[1], -t[0].loglik))[0]
    return chosen, table


def select_kernel_hyper(grid, make_kernel: Callable[[float], Kernel],
                        error: ErrorModel, X, y,
                        config: FitConfig | None = None, prior_mean="mean",
                        center: bool = False):
    """Grid search of a kernel hyperparameter by cross-validated error.

    For each grid value: fit by ML, then CV-select among its local maxima.
    Per-point failures are recorded in the table (cv error inf) without
    aborting the sweep.  Returns (best value, fitted model, table).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("hyperparameter grid must be non-empty")
    config = config or FitConfig()
    table = []
    best = None
    for hyper in grid:
        try:
            kern = make_kernel(hyper)
            fitted, maxima = fit_ml(kern, error, X, y, config,
                                    prior_mean=prior_mean, center=center)
            chosen, cv_table = select_by_cv(maxima, kern, error, X, y, config,
                                            prior_mean=prior_mean, center=center)
            rmse = dict((id(m), r) for m, r in cv_table)[id(chosen)]
            refit = IPriorModel(
                kern,
                error.with_innovation_precision(float(np.exp(chosen.log_psi))),
                float(np.exp(chosen.log_scale)),
                as_rows(X), np.asarray(y, dtype=float),
                prior_mean=prior_mean, center=center,
            )
            table.append({"hyper": hyper, "cv_rmse": rmse, "loglik": chosen.loglik,
                          "error": None})
            if best is None or rmse < best[1]:
                best = (hyper, rmse, refit)
        except (NumericalBreakdown, np.linalg.LinAlgError, ValueError) as exc:
            table.append({"hyper": hyper, "cv_rmse": float("inf"), "loglik": float("nan"),
                          "error": str(exc)})
    if best is None:
        raise NumericalBreakdown("every grid value failed to fit; see the sweep table")
    return best[0], best[2], table


def fit_report(method: str, maxima: list[LocalMaximum], cv_table,
               selected: LocalMaximum, extra: dict | None = None) -> dict:
    """JSON-ready fit report: all maxima, CV table, selection, diagnostics."""
    rmse_by_id = {id(m): r for m, r in (cv_table or [])}
    return {
        "method": method,
        "maxima": [
            {
                "params": [float(p) for p in m.params],
                "loglik": m.loglik,
                "boundary": m.boundary,
                "start_index": m.start_index,
                "n_evals": m.n_evals,
                "cv_rmse": rmse_by_id.get(id(m)),
            }
            for m in maxima
        ],
        "selected": {
            "params": [float(p) for p in selected.params],
            "loglik": selected.loglik,
            "boundary": selected.boundary,
        },
        "diagnostics": extra or {},
    }
