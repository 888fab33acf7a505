"""Dataset ingestion, train/test protocols, classification and benchmark ops.

CSV files use '.' decimals, comma separators, and a header row.  The
functional loader expects one curve per row on a shared grid (the
spectrometric layout: channel columns plus response columns named
moisture/fat/protein); a 215-row file gets the conventional 172/43
train/test split automatically.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import IPriorModel, NumericalBreakdown
from .error_models import IID, ErrorModel
from .estimation import FitConfig, fit_ml, maximize_multistart, select_by_cv, select_kernel_hyper
from .kernels import (
    CanonicalKernel,
    FbmKernel,
    Kernel,
    SobolevMetric,
    SqExpKernel,
    as_rows,
    gram,
)
from .core import MarginalProfile

__all__ = [
    "Dataset",
    "load_tabular",
    "load_functional",
    "write_csv",
    "classify_eval",
    "ClassifyRow",
    "iprior_protocol",
    "tecator_benchmark",
]

KNOWN_RESPONSES = ("moisture", "fat", "protein")
FUNCTIONAL_DEFAULT_SPLIT = (215, 172)  # row count -> training size


@dataclass
class Dataset:
    """Covariate rows plus response, optional labels, and an optional split."""

    X: np.ndarray
    y: np.ndarray
    labels: np.ndarray | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    metric: object | None = None
    degenerate_rows: tuple = ()

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        if self.labels is not None and set(np.unique(self.labels)) - {0, 1}:
            raise ValueError("labels must be in {0, 1}")
        if self.train_idx is not None and self.test_idx is not None:
            tr, te = set(self.train_idx.tolist()), set(self.test_idx.tolist())
            if tr & te:
                raise ValueError("train and test index sets overlap")
            if tr | te != set(range(self.X.shape[0])):
                raise ValueError("train and test index sets must cover all rows")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def train(self):
        return self.X[self.train_idx], self.y[self.train_idx]

    def test(self):
        return self.X[self.test_idx], self.y[self.test_idx]


def _read_csv(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def _parse_cell(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"non-numeric cell at row {row}, column {col!r}: {raw!r}") from None


def load_tabular(path: str, response: str, label_mode: bool = False) -> Dataset:
    """Load a numeric CSV with a header; one column is the response.

    In label mode the response must be exactly 0 or 1 and is kept both as
    the regression target and as the class labels.
    """
    header, body = _read_csv(path)
    if response not in header:
        raise ValueError(f"{path}: missing response column {response!r} (have {header})")
    if not body:
        raise ValueError(f"{path}: no data rows")
    ridx = header.index(response)
    X, y = [], []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        vals = [_parse_cell(c, i + 1, header[j]) for j, c in enumerate(row)]
        y.append(vals[ridx])
        X.append([v for j, v in enumerate(vals) if j != ridx])
    y = np.asarray(y)
    labels = None
    if label_mode:
        bad = np.nonzero((y != 0.0) & (y != 1.0))[0]
        if bad.size:
            raise ValueError(
                f"{path}: label column {response!r} has value {y[bad[0]]} at row "
                f"{bad[0] + 1}; labels must be 0 or 1"
            )
        labels = y.astype(int)
    return Dataset(X=np.asarray(X), y=y, labels=labels)


def load_functional(path: str, response: str = "fat", spacing: float = 1.0,
                    split: tuple | None = None) -> Dataset:
    """Load curves sampled on a shared grid, with a Sobolev metric attached.

    Channel columns are every column not named like a response
    (moisture/fat/protein).  Constant curves have zero first-derivative
    norm and are flagged as degenerate: under the canonical kernel they
    are indistinguishable from the origin.
    """
    header, body = _read_csv(path)
    non_channel = {name for name in header if name.lower() in KNOWN_RESPONSES}
    non_channel.add(response)
    if response not in header:
        raise ValueError(f"{path}: missing response column {response!r}")
    chan_idx = [j for j, name in enumerate(header) if name not in non_channel]
    if len(chan_idx) < 2:
        raise ValueError(f"{path}: need at least 2 channel columns, found {len(chan_idx)}")
    ridx = header.index(response)
    X, y = [], []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: ragged row {i + 1}: {len(row)} cells, expected {len(header)}")
        vals = [_parse_cell(c, i + 1, header[j]) for j, c in enumerate(row)]
        X.append([vals[j] for j in chan_idx])
        y.append(vals[ridx])
    X = np.asarray(X)
    y = np.asarray(y)
    n = X.shape[0]

    metric = SobolevMetric(spacing=spacing)
    norms = metric.norms_sq(X)
    degenerate = tuple(int(i) for i in np.nonzero(norms == 0.0)[0])
    if degenerate:
        warnings.warn(
            f"{path}: rows {list(degenerate)} are constant curves (zero Sobolev norm); "
            "they are degenerate under the canonical kernel",
            stacklevel=2,
        )

    if split is None:
        if n == FUNCTIONAL_DEFAULT_SPLIT[0]:
            n_train = FUNCTIONAL_DEFAULT_SPLIT[1]
        else:
            raise ValueError(
                f"{path}: {n} rows is not the conventional 215; pass an explicit "
                "split=(train_size,) or (train_idx, test_idx)"
            )
        train_idx = np.arange(n_train)
        test_idx = np.arange(n_train, n)
    elif len(split) == 1:
        n_train = int(split[0])
        if not 0 < n_train < n:
            raise ValueError(f"train size {n_train} out of range for {n} rows")
        train_idx = np.arange(n_train)
        test_idx = np.arange(n_train, n)
    else:
        train_idx = np.asarray(split[0], dtype=int)
        test_idx = np.asarray(split[1], dtype=int)
    return Dataset(X=X, y=y, train_idx=train_idx, test_idx=test_idx,
                   metric=metric, degenerate_rows=degenerate)


def write_csv(path: str, header: Sequence[str], rows):
    """Write a CSV atomically, floats at full round-trip precision."""
    import io
    import os
    import tempfile

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c
                         for c in row])
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- classification -----------------------------------------------------------


@dataclass
class ClassifyRow:
    size: int
    mean_misclass: float
    se: float
    repeats: int
    degenerate: int
    rates: tuple


def iprior_protocol(kernel: Kernel, error: ErrorModel | None = None,
                    config: FitConfig | None = None, center: bool = False,
                    fixed: tuple | None = None) -> Callable:
    """Build a fit-and-predict callable for classify_eval.

    fixed = (scale, psi) skips estimation (useful for fast, stable runs);
    otherwise hyperparameters come from ML with CV selection among maxima.
    """
    error = error or IID()
    config = config or FitConfig()

    def protocol(X_train, y_train):
        if fixed is not None:
            scale, psi = fixed
            model = IPriorModel(kernel, error.with_innovation_precision(psi), scale,
                                X_train, y_train, prior_mean="mean", center=center)
        else:
            _, maxima = fit_ml(kernel, error, X_train, y_train, config,
                               prior_mean="mean", center=center)
            folds = min(config.folds, max(2, len(y_train) // 2))
            cfg = FitConfig(starts=config.starts, max_evals=config.max_evals,
                            tol=config.tol, xtol=config.xtol, folds=folds,
                            seed=config.seed)
            chosen, _ = select_by_cv(maxima, kernel, error, X_train, y_train, cfg,
                                     prior_mean="mean", center=center)
            model = IPriorModel(
                kernel,
                error.with_innovation_precision(float(np.exp(chosen.log_psi))),
                float(np.exp(chosen.log_scale)),
                X_train, y_train, prior_mean="mean", center=center,
            )
        return model.predict

    return protocol


def classify_eval(dataset: Dataset, protocol: Callable, sizes: Sequence[int],
                  repeats: int, seed: int = 0,
                  threshold: float = 0.5) -> list[ClassifyRow]:
    """Subsample-and-refit misclassification study.

    Each repeat draws a training subsample, fits the regression protocol
    to the 0/1 labels, predicts every remaining point, and classifies at
    the threshold (ties go to class 1).  Reports mean misclassification
    percent and its standard error across repeats.  A subsample with a
    single class is redrawn once; if still degenerate the repeat is
    recorded as such and skipped.
    """
    if dataset.labels is None:
        raise ValueError("classify_eval needs a dataset with 0/1 labels")
    n = dataset.n
    rows = []
    for size_idx, size in enumerate(sizes):
        if not 1 < size < n:
            raise ValueError(f"subsample size {size} must be in (1, {n})")
        rates = []
        degenerate = 0
        for rep in range(repeats):
            rng = np.random.default_rng(np.random.SeedSequence((seed, size_idx, rep)))
            idx = rng.choice(n, size=size, replace=False)
            if len(np.unique(dataset.labels[idx])) < 2:
                idx = rng.choice(n, size=size, replace=False)  # one redraw
            if len(np.unique(dataset.labels[idx])) < 2:
                degenerate += 1
                continue
            rest = np.setdiff1d(np.arange(n), idx)
            predict = protocol(dataset.X[idx], dataset.labels[idx].astype(float))
            pred = np.asarray(predict(dataset.X[rest]))
            cls = (pred >= threshold).astype(int)
            rates.append(100.0 * float(np.mean(cls != dataset.labels[rest])))
        m = float(np.mean(rates)) if rates else float("nan")
        se = float(np.std(rates, ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else 0.0
        rows.append(ClassifyRow(size=int(size), mean_misclass=m, se=se,
                                repeats=len(rates), degenerate=degenerate,
                                rates=tuple(rates)))
    return rows


# -- spectrometric benchmark ---------------------------------------------------


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _fit_iprior_row(kernel, Xtr, ytr, Xte, config):
    _, maxima = fit_ml(kernel, IID(), Xtr, ytr, config, prior_mean="mean", center=True)
    chosen, _ = select_by_cv(maxima, kernel, IID(), Xtr, ytr, config,
                             prior_mean="mean", center=True)
    model = IPriorModel(
        kernel, IID(precision=float(np.exp(chosen.log_psi))),
        float(np.exp(chosen.log_scale)), Xtr, ytr, prior_mean="mean", center=True,
    )
    return model.fitted(), model.predict(Xte)


def _fit_iprior_sqexp_ml(metric, Xtr, ytr, Xte, config):
    """I-prior with a squared-exponential space: ML over (scale, bandwidth, psi)."""
    Xtr = as_rows(Xtr)
    ytr = np.asarray(ytr, dtype=float)
    f0 = float(np.mean(ytr))
    r = ytr - f0
    cache: dict[float, MarginalProfile] = {}

    def profile_at(log_bw):
        key = round(float(log_bw), 12)
        if key not in cache:
            from .kernels import center_kernel

            kern = center_kernel(SqExpKernel(bandwidth=float(np.exp(log_bw)), metric=metric), Xtr)
            H = gram(kern, Xtr).values
            cache[key] = MarginalProfile(H, IID(), r, mode="iprior")
        return cache[key]

    def objective(t):
        if abs(t[1]) > 14.0:
            return -np.inf
        return profile_at(t[1]).loglik_safe(t[0], t[2])

    starts = tuple((ls, lb, lp) for ls in (-3.0, 3.0) for lb in (-5.0, -2.0, 1.0)
                   for lp in (-3.0, 3.0))
    maxima, _ = maximize_multistart(objective, starts, max_evals=300, tol=config.tol)
    best = maxima[0]
    from .kernels import center_kernel

    kern = SqExpKernel(bandwidth=float(np.exp(best.params[1])), metric=metric)
    model = IPriorModel(
        kern, IID(precision=float(np.exp(best.params[2]))),
        float(np.exp(best.params[0])), Xtr, ytr, prior_mean="mean", center=True,
    )
    return model.fitted(), model.predict(Xte), float(np.exp(best.params[1]))


def tecator_benchmark(dataset: Dataset, hurst_grid=None,
                      config: FitConfig | None = None) -> list[dict]:
    """Train/test RMSE table for the functional-regression benchmark.

    Rows: global constant, linear (canonical kernel), fractional kernel at
    Hurst 0.5, fractional kernel with CV-selected Hurst, and the
    squared-exponential space with its ML bandwidth.  Per-row failures are
    reported in the row, not raised.
    """
    if dataset.train_idx is None:
        raise ValueError("the benchmark needs a dataset with a train/test split")
    config = config or FitConfig()
    hurst_grid = list(hurst_grid) if hurst_grid is not None else [
        0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98,
    ]
    metric = dataset.metric or SobolevMetric()
    Xtr, ytr = dataset.train()
    Xte, yte = dataset.test()
    rows = []

    def add(name, fit_tr, fit_te, params=None, error=None):
        rows.append({
            "model": name,
            "train_rmse": _rmse(fit_tr, ytr) if fit_tr is not None else float("nan"),
            "test_rmse": _rmse(fit_te, yte) if fit_te is not None else float("nan"),
            "params": params or {},
            "error": error,
        })

    const = float(np.mean(ytr))
    add("constant", np.full_like(ytr, const), np.full_like(yte, const))

    for name, kernel in (
        ("iprior-linear", CanonicalKernel(metric=metric)),
        ("iprior-fbm-0.5", FbmKernel(hurst=0.5, metric=metric)),
    ):
        try:
            fit_tr, fit_te = _fit_iprior_row(kernel, Xtr, ytr, Xte, config)
            add(name, fit_tr, fit_te)
        except (NumericalBreakdown, np.linalg.LinAlgError, ValueError) as exc:
            add(name, None, None, error=str(exc))

    try:
        hurst, model, table = select_kernel_hyper(
            hurst_grid, lambda g: FbmKernel(hurst=g, metric=metric),
            IID(), Xtr, ytr, config, prior_mean="mean", center=True,
        )
        add("iprior-fbm-cv", model.fitted(), model.predict(Xte),
            params={"hurst": hurst, "cv_table": [
                {"hyper": t["hyper"], "cv_rmse": t["cv_rmse"]} for t in table
            ]})
    except (NumericalBreakdown, np.linalg.LinAlgError, ValueError) as exc:
        add("iprior-fbm-cv", None, None, error=str(exc))

    try:
        fit_tr, fit_te, bw = _fit_iprior_sqexp_ml(metric, Xtr, ytr, Xte, config)
        add("iprior-sqexp", fit_tr, fit_te, params={"bandwidth": bw})
    except (NumericalBreakdown, np.linalg.LinAlgError, ValueError) as exc:
        add("iprior-sqexp", None, None, error=str(exc))
    return rows
