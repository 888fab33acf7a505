"""Tikhonov regularization with GCV, squared-exponential GPR, and g-prior ops.

The Tikhonov regularizer minimizes the generalized least squares
objective plus a scale^-1 penalty on the squared function norm, which is
the posterior mean under a Gaussian prior with covariance kernel
scale * h: one scale parameter, oriented so that larger scale means less
smoothing (the GP convention multiplies the kernel by the same scale, so
the two conventions are reciprocal in the penalty, identical here).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .core import IPriorModel, MarginalProfile, NumericalBreakdown
from .error_models import ErrorModel, IID, covariance_matrix, precision_matrix, solve_spd
from .estimation import FitConfig, LocalMaximum, maximize_multistart
from .kernels import Kernel, SqExpKernel, as_rows, cross_gram, gram

__all__ = [
    "TikhonovFit",
    "tikhonov_fit",
    "tikhonov_ml",
    "gcv_select",
    "SeGprFit",
    "se_gpr_fit",
    "gprior_covariance",
    "iprior_linear_covariance",
]


@dataclass
class TikhonovFit:
    """Representer solution of the penalized GLS problem."""

    scale: float
    weights: np.ndarray
    fitted: np.ndarray
    smoother_trace: float
    prior_mean_values: np.ndarray


def _resolve_f0(prior_mean, y, n):
    if isinstance(prior_mean, str):
        if prior_mean != "mean":
            raise ValueError(f"unknown prior mean spec {prior_mean!r}")
        return np.full(n, float(np.mean(y)))
    arr = np.asarray(prior_mean, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"prior-mean vector must have length {n}")
    return arr


def tikhonov_fit(kernel: Kernel, error: ErrorModel, scale: float, X, y,
                 prior_mean=0.0, center: bool = False,
                 H: np.ndarray | None = None) -> TikhonovFit:
    """Fit f = f0 + H w minimizing (y-f)' Psi (y-f) + scale^-1 w' H w.

    Solved through the equivalent posterior-mean form
    f = f0 + scale*H (scale*H + Psi^-1)^-1 (y - f0).
    """
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    X = as_rows(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if H is None:
        kern = _maybe_center(kernel, X, center)
        H = gram(kern, X).values
    f0 = _resolve_f0(prior_mean, y, n)
    r = y - f0
    Pinv = covariance_matrix(error, n)
    A = scale * H + Pinv
    u = solve_spd(A, r)
    w = scale * u
    fitted = f0 + H @ w
    trace = float(n - np.trace(solve_spd(A, Pinv)))
    return TikhonovFit(scale=float(scale), weights=w, fitted=fitted,
                       smoother_trace=trace, prior_mean_values=f0)


def _maybe_center(kernel, X, center):
    if center:
        from .kernels import center_kernel

        return center_kernel(kernel, X)
    return kernel


def tikhonov_ml(kernel: Kernel, error: ErrorModel, X, y, config: FitConfig | None = None,
                prior_mean=0.0, center: bool = False):
    """Estimate (scale, noise precision) for the regularizer by its implied
    marginal likelihood y ~ N(f0, scale*H + Psi^-1); returns (fit, maxima)."""
    config = config or FitConfig()
    X = as_rows(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    kern = _maybe_center(kernel, X, center)
    H = gram(kern, X).values
    f0 = _resolve_f0(prior_mean, y, n)
    profile = MarginalProfile(H, error, y - f0, mode="gp")
    maxima, _ = maximize_multistart(
        lambda t: profile.loglik_safe(t[0], t[1]),
        config.starts, max_evals=config.max_evals, tol=config.tol,
        xtol=config.xtol, dedup_tol=config.dedup_tol,
    )
    best = maxima[0]
    err = error.with_innovation_precision(float(np.exp(best.log_psi)))
    fit = tikhonov_fit(kern, err, float(np.exp(best.log_scale)), X, y,
                       prior_mean=f0, H=H)
    return fit, maxima


def _gcv_score_dense(H, error, scale, y):
    n = H.shape[0]
    Pinv = covariance_matrix(error, n)
    A = scale * H + Pinv
    resid = Pinv @ solve_spd(A, y)
    tr = float(np.trace(solve_spd(A, Pinv)))
    if tr <= 0:
        raise NumericalBreakdown(f"tr(I - S) = {tr:.3g} <= 0 at scale {scale:.3g}")
    return n * float(resid @ resid) / tr**2


def _gcv_score_eigen(d, U, error: IID, scale, y):
    # iid-only spectral form: residual factor (1/psi) / (scale*d + 1/psi)
    shrink = (1.0 / error.precision) / (scale * d + 1.0 / error.precision)
    z = U.T @ y
    tr = float(np.sum(shrink))
    if tr <= 0:
        raise NumericalBreakdown(f"tr(I - S) = {tr:.3g} <= 0 at scale {scale:.3g}")
    return len(y) * float(np.sum((shrink * z) ** 2)) / tr**2


def gcv_select(kernel: Kernel, error: ErrorModel, scale_grid: Sequence[float], X, y,
               center: bool = False, refine: bool = True):
    """Pick the regularizer scale by generalized cross-validation.

    GCV(scale) = n ||(I - S) y||^2 / tr(I - S)^2 over the grid, optionally
    refined by golden-section search between the best grid neighbours.
    Returns (best scale, [(scale, score), ...]).
    """
    grid = [float(s) for s in scale_grid]
    if not grid:
        raise ValueError("scale grid must be non-empty")
    X = as_rows(X)
    y = np.asarray(y, dtype=float)
    kern = _maybe_center(kernel, X, center)
    H = gram(kern, X).values
    if isinstance(error, IID):
        d, U = np.linalg.eigh(H)
        score = lambda s: _gcv_score_eigen(d, U, error, s, y)
    else:
        score = lambda s: _gcv_score_dense(H, error, s, y)
    table = [(s, score(s)) for s in grid]
    best_i = int(np.argmin([t[1] for t in table]))
    best_s, best_v = table[best_i]
    if refine and len(grid) > 1:
        lo = table[max(best_i - 1, 0)][0]
        hi = table[min(best_i + 1, len(table) - 1)][0]
        if hi > lo:
            best_s, best_v = _golden_min(score, np.log(lo), np.log(hi), best_s, best_v)
    return best_s, table


def _golden_min(score, la, lb, best_x, best_v, iters: int = 40, tol: float = 1e-6):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = lb - phi * (lb - la)
    x2 = la + phi * (lb - la)
    f1, f2 = score(np.exp(x1)), score(np.exp(x2))
    for _ in range(iters):
        if lb - la < tol:
            break
        if f1 < f2:
            lb, x2, f2 = x2, x1, f1
            x1 = lb - phi * (lb - la)
            f1 = score(np.exp(x1))
        else:
            la, x1, f1 = x1, x2, f2
            x2 = la + phi * (lb - la)
            f2 = score(np.exp(x2))
    for x, f in ((x1, f1), (x2, f2)):
        if f < best_v:
            best_x, best_v = float(np.exp(x)), f
    return best_x, best_v


@dataclass
class SeGprFit:
    """Squared-exponential GP regression fitted by marginal likelihood."""

    bandwidth: float
    scale: float
    noise_precision: float
    loglik: float
    fitted: np.ndarray
    weights: np.ndarray
    prior_mean_const: float
    X: np.ndarray
    maxima: list
    failed_starts: int

    def predict(self, X_new) -> np.ndarray:
        kern = SqExpKernel(bandwidth=self.bandwidth)
        K = cross_gram(kern, self.X, as_rows(X_new))
        return self.prior_mean_const + K @ self.weights


DEFAULT_SE_STARTS = tuple(
    (ls, lb, lp) for ls in (-3.0, 0.0, 3.0) for lb in (-3.0, -1.0, 1.0) for lp in (-3.0, 0.0, 3.0)
)


def se_gpr_fit(X, y, error: ErrorModel | None = None, prior_mean=0.0,
               starts=DEFAULT_SE_STARTS, max_evals: int = 400,
               tol: float = 1e-6) -> SeGprFit:
    """Fit the squared-exponential GP by ML over (scale, bandwidth, precision).

    The fixed-exponent kernel (exponent 1) is rebuilt at each candidate
    bandwidth; everything else reuses the spectral profile.  All-start
    failure raises with diagnostics rather than returning a fake fit.
    """
    error = error or IID()
    X = as_rows(X)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if isinstance(prior_mean, str) and prior_mean == "mean":
        f0c = float(np.mean(y))
    else:
        f0c = float(prior_mean)  # prediction needs a constant prior mean
    f0 = np.full(n, f0c)
    r = y - f0

    if not isinstance(error, IID):
        raise ValueError("the squared-exponential baseline assumes iid errors")
    base_kern = SqExpKernel(bandwidth=1.0)
    d2 = base_kern.metric.dist_sq(X, X)
    np.clip(d2, 0.0, None, out=d2)
    eye = np.eye(n)

    def objective(t):
        # direct Cholesky per candidate: the 1/psi ridge keeps V positive
        # definite, so the Gram needs no spectral cleanup here
        log_scale, log_bw, log_psi = t
        if abs(log_bw) > 14.0:  # beyond this the Gram saturates numerically
            return -np.inf
        K = np.exp(-d2 / (2.0 * np.exp(2.0 * log_bw)))
        V = np.exp(log_scale) * K + np.exp(-log_psi) * eye
        try:
            L = np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            return -np.inf
        u = solve_triangular(L, r, lower=True)
        val = -0.5 * (n * np.log(2 * np.pi) + 2.0 * np.sum(np.log(np.diag(L))) + u @ u)
        return float(val) if np.isfinite(val) else -np.inf

    maxima, n_failed = maximize_multistart(objective, starts, max_evals=max_evals, tol=tol)
    best = maxima[0]
    scale = float(np.exp(best.params[0]))
    bandwidth = float(np.exp(best.params[1]))
    psi = float(np.exp(best.params[2]))
    err = error.with_innovation_precision(psi)
    kern = SqExpKernel(bandwidth=bandwidth)
    H = gram(kern, X).values
    A = scale * H + covariance_matrix(err, n)
    w = scale * solve_spd(A, r)
    return SeGprFit(
        bandwidth=bandwidth, scale=scale, noise_precision=psi,
        loglik=best.loglik, fitted=f0 + H @ w, weights=w,
        prior_mean_const=f0c, X=X, maxima=maxima,
        failed_starts=n_failed,
    )


def gprior_covariance(X, error: ErrorModel, g: float) -> np.ndarray:
    """Coefficient prior covariance g (X' Psi X)^-1 for the linear model."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    P = precision_matrix(error, n)
    info = X.T @ P @ X
    if g == 0.0:
        return np.zeros((p, p))
    if np.linalg.matrix_rank(info) < p:
        raise np.linalg.LinAlgError(
            "X' Psi X is rank deficient; the g-prior needs an invertible "
            "information matrix (the information-prior variant does not)"
        )
    return g * solve_spd(info, np.eye(p))


def iprior_linear_covariance(X, error: ErrorModel, scale: float,
                             metric_matrix: np.ndarray | None = None) -> np.ndarray:
    """Coefficient prior covariance under the information prior, scale * M X'PsiX M.

    With the Euclidean metric (M = I) this is scale * X' Psi X; with
    M = (X' Psi X)^-1 (the Mahalanobis metric of the fitted design) it is
    proportional to the standard g-prior covariance.  No matrix inversion
    is required for the default metric.
    """
    X = np.asarray(X, dtype=float)
    P = precision_matrix(error, X.shape[0])
    info = X.T @ P @ X
    if metric_matrix is None:
        return scale * info
    M = np.asarray(metric_matrix, dtype=float)
    return scale * (M @ info @ M)
