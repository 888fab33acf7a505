"""Exact Gaussian posterior for information-prior regression.

The regression function f gets a Gaussian prior with mean f0 and
covariance proportional to the Fisher information on f, which over the
data span is the kernel

    h_n(x, x') = sum_ij psi_ij h(x, x_i) h(x', x_j).

With f-values at the training points distributed N(f0, scale^2 H Psi H)
and errors N(0, Psi^-1), the marginal response covariance is

    V = scale^2 H Psi H + Psi^-1,

and posterior weights, marginal likelihood, prediction and parameter
information all reduce to operations on V.

Because every supported error family factors as Psi = psi * Q = psi R R'
with R triangular, the congruence W = R' V R^-T ... more precisely
V = R^-T (scale^2*psi*G^2 + I/psi) R^-1 with G = R' H R, so one
eigendecomposition of G makes every (scale, psi) likelihood, gradient and
information evaluation O(n).  That is what makes the multi-start
hyperparameter searches cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .error_models import (
    AR1,
    IID,
    MA1,
    ErrorModel,
    covariance_matrix,
    precision_matrix,
    solve_spd,
)
from .kernels import (
    CanonicalKernel,
    CenteredKernel,
    EuclideanMetric,
    FbmKernel,
    Kernel,
    MahalanobisMetric,
    Metric,
    SobolevMetric,
    SqExpKernel,
    as_rows,
    center_kernel,
    cross_gram,
    gram,
)

__all__ = [
    "NumericalBreakdown",
    "PosteriorSummary",
    "MarginalProfile",
    "IPriorModel",
    "fisher_kernel",
    "fisher_info_functional",
    "fn_norm",
    "log_marginal_likelihood",
    "param_fisher_info_fd",
]

LOG_2PI = float(np.log(2.0 * np.pi))


class NumericalBreakdown(RuntimeError):
    """A linear-algebra or optimization step failed beyond recovery."""


@dataclass
class PosteriorSummary:
    """Posterior weights, their covariance (= V^-1), and the evidence."""

    weights: np.ndarray
    weight_covariance: np.ndarray
    log_marginal: float


def fisher_info_functional(g_values, error: ErrorModel) -> float:
    """Fisher information carried by the data about the functional <f, g>.

    g_values are g evaluated at the training points; the information is
    g' Psi g, and vanishes exactly when g vanishes on the sample.
    """
    g = np.asarray(g_values, dtype=float)
    P = precision_matrix(error, g.size)
    return float(g @ P @ g)


def fn_norm(w, error: ErrorModel) -> float:
    """Squared data-span norm w' Psi^-1 w, via a factorization solve."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        return 0.0
    if isinstance(error, IID):
        return float(w @ w) / error.precision
    P = precision_matrix(error, w.size)
    return float(w @ solve_spd(P, w))


class FisherKernel:
    """The information kernel h_n induced by a base kernel and error model."""

    def __init__(self, kernel: Kernel, error: ErrorModel, X_train):
        self.kernel = kernel
        self.X_train = as_rows(X_train)
        self.error = error
        self._P = precision_matrix(error, self.X_train.shape[0])

    def matrix(self, Xa, Xb) -> np.ndarray:
        Ka = cross_gram(self.kernel, self.X_train, Xa)
        Kb = cross_gram(self.kernel, self.X_train, Xb)
        return Ka @ self._P @ Kb.T

    def __call__(self, x, xp) -> float:
        return float(self.matrix(np.atleast_2d(np.asarray(x, dtype=float)),
                                 np.atleast_2d(np.asarray(xp, dtype=float)))[0, 0])


def fisher_kernel(kernel: Kernel, error: ErrorModel, X_train) -> FisherKernel:
    """Build h_n(x, x') = h_x' Psi h_x' as a callable kernel object."""
    return FisherKernel(kernel, error, X_train)


class MarginalProfile:
    """Marginal likelihood of (log scale, log psi) after spectral preprocessing.

    mode "iprior" profiles V = scale^2 H Psi H + Psi^-1 (eigenvalues
    scale^2 psi d^2 + 1/psi); mode "gp" profiles V = scale*H + Psi^-1
    (eigenvalues scale*d + 1/psi), the form shared by the Tikhonov
    regularizer and plain GP priors.
    """

    def __init__(self, H: np.ndarray, error: ErrorModel, resid: np.ndarray,
                 mode: str = "iprior"):
        if mode not in ("iprior", "gp"):
            raise ValueError(f"unknown profile mode {mode!r}")
        self.mode = mode
        self.n = H.shape[0]
        R = error.structure_factor(self.n)
        self._R = R
        if R is None:
            G = H
            s = resid
            self._logdet_R = 0.0
        else:
            G = R.T @ H @ R
            G = 0.5 * (G + G.T)
            s = R.T @ resid
            self._logdet_R = float(np.sum(np.log(np.abs(np.diag(R)))))
        d, U = np.linalg.eigh(G)
        self.d = d
        self._U = U
        self.z = U.T @ s
        self._RU = U if R is None else R @ U

    def eigenvalues(self, log_scale: float, log_psi: float) -> np.ndarray:
        psi = np.exp(log_psi)
        if self.mode == "iprior":
            lam2 = np.exp(2.0 * log_scale)
            return lam2 * psi * self.d**2 + 1.0 / psi
        return np.exp(log_scale) * self.d + 1.0 / psi

    def _eig_derivs(self, log_scale, log_psi):
        psi = np.exp(log_psi)
        if self.mode == "iprior":
            core = np.exp(2.0 * log_scale) * psi * self.d**2
            return core * 2.0, core - 1.0 / psi
        return np.exp(log_scale) * self.d, np.full(self.n, -1.0 / psi)

    def loglik(self, log_scale: float, log_psi: float) -> float:
        """Log marginal likelihood; raises on an indefinite covariance."""
        v = self.eigenvalues(log_scale, log_psi)
        if not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise NumericalBreakdown(
                f"indefinite marginal covariance at log_scale={log_scale:.6g}, "
                f"log_psi={log_psi:.6g}"
            )
        quad = float(np.sum(self.z**2 / v))
        logdet = float(np.sum(np.log(v))) - 2.0 * self._logdet_R
        return -0.5 * (self.n * LOG_2PI + logdet + quad)

    def loglik_safe(self, log_scale: float, log_psi: float) -> float:
        """Like loglik but maps any failure to -inf (for searches)."""
        try:
            val = self.loglik(log_scale, log_psi)
        except (NumericalBreakdown, FloatingPointError):
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    def gradient(self, log_scale: float, log_psi: float) -> np.ndarray:
        """Analytic gradient of loglik in (log scale, log psi)."""
        v = self.eigenvalues(log_scale, log_psi)
        dv_ds, dv_dp = self._eig_derivs(log_scale, log_psi)
        w = (self.z**2 / v - 1.0) / v
        return 0.5 * np.array([np.sum(w * dv_ds), np.sum(w * dv_dp)])

    def fisher_information(self, log_scale: float, log_psi: float) -> np.ndarray:
        """Expected information for (log scale, log psi):
        u_jk = tr(V^-1 dV_j V^-1 dV_k) / 2, closed form on the spectrum."""
        v = self.eigenvalues(log_scale, log_psi)
        dv_ds, dv_dp = self._eig_derivs(log_scale, log_psi)
        a, b = dv_ds / v, dv_dp / v
        return 0.5 * np.array([[np.sum(a * a), np.sum(a * b)],
                               [np.sum(a * b), np.sum(b * b)]])

    def posterior_weights(self, log_scale, log_psi, QH: np.ndarray) -> np.ndarray:
        """Posterior mean weights scale*Psi*H*V^-1*resid in the spectral basis.

        QH is Q @ H (just H for iid structure).
        """
        v = self.eigenvalues(log_scale, log_psi)
        lam, psi = np.exp(log_scale), np.exp(log_psi)
        return lam * psi * (QH @ (self._RU @ (self.z / v)))

    def marginal_inverse(self, log_scale, log_psi) -> np.ndarray:
        """Dense V^-1 (also the posterior weight covariance)."""
        v = self.eigenvalues(log_scale, log_psi)
        RU = self._RU
        return (RU / v) @ RU.T


def _resolve_prior_mean(prior_mean, X, y):
    """Normalise the prior-mean argument to (train values, predict fn, tag, data).

    Accepted forms: "mean" (constant at mean(y)), a float constant, a vector of
    values over the training points (no extrapolation), or a callable X -> values.
    """
    n = X.shape[0]
    if callable(prior_mean):
        f0_train = np.asarray(prior_mean(X), dtype=float).reshape(n)
        return f0_train, lambda Xq: np.asarray(prior_mean(Xq), dtype=float).reshape(len(Xq)), "callable", None
    if isinstance(prior_mean, str):
        if prior_mean != "mean":
            raise ValueError(f"unknown prior mean spec {prior_mean!r}")
        if y is None:
            raise ValueError('prior_mean="mean" needs a response vector')
        c = float(np.mean(y))
        return np.full(n, c), lambda Xq: np.full(len(Xq), c), "constant", c
    arr = np.asarray(prior_mean, dtype=float)
    if arr.ndim == 0:
        c = float(arr)
        return np.full(n, c), lambda Xq: np.full(len(Xq), c), "constant", c
    if arr.shape != (n,):
        raise ValueError(f"prior-mean vector must have length {n}, got {arr.shape}")

    def _no_extrapolation(Xq):
        raise ValueError(
            "prior mean was given as values over the training points and "
            "cannot be evaluated at new inputs"
        )

    return arr.copy(), _no_extrapolation, "vector", arr.copy()


class IPriorModel:
    """Fitted information-prior regression model.

    Immutable after construction; safe for concurrent prediction.  The
    heavy caches (Gram spectrum, weight transform) are built once here.
    """

    def __init__(self, kernel: Kernel, error: ErrorModel, scale: float,
                 X, y=None, prior_mean="mean", center: bool = False,
                 weights: np.ndarray | None = None):
        if not scale > 0:
            raise ValueError(f"scale must be > 0, got {scale}")
        self.X = as_rows(X)
        n = self.X.shape[0]
        if y is not None:
            y = np.asarray(y, dtype=float)
            if y.shape != (n,):
                raise ValueError(f"response must have length {n}, got {y.shape}")
        self.y = y
        if center:
            kernel = center_kernel(kernel, self.X)
        self.kernel = kernel
        self.error = error
        self.scale = float(scale)
        (self._f0_train, self._f0_fn, self._f0_kind, self._f0_data) = _resolve_prior_mean(
            prior_mean, self.X, y
        )
        self.gram = gram(kernel, self.X)
        H = self.gram.values
        resid = (y - self._f0_train) if y is not None else np.zeros(n)
        self.profile = MarginalProfile(H, error, resid, mode="iprior")
        R = error.structure_factor(n)
        Q = error.structure(n) if R is not None else None
        self._QH = H if Q is None else Q @ H
        self._log_scale = float(np.log(scale))
        self._log_psi = float(np.log(error.innovation_precision))
        if weights is not None:
            weights = np.asarray(weights, dtype=float).reshape(n)
            self._weights = weights
        elif y is not None:
            self._weights = self.profile.posterior_weights(
                self._log_scale, self._log_psi, self._QH
            )
        else:
            raise ValueError("either a response vector or posterior weights is required")

    # -- posterior ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    def log_marginal(self) -> float:
        """Evidence of (scale, error) for the observed response."""
        self._need_y()
        return self.profile.loglik(self._log_scale, self._log_psi)

    def log_marginal_at(self, scale: float, psi: float) -> float:
        """Evidence at other hyperparameters, reusing the cached spectrum."""
        self._need_y()
        return self.profile.loglik(float(np.log(scale)), float(np.log(psi)))

    def log_marginal_gradient(self) -> np.ndarray:
        """Analytic gradient of the evidence in (log scale, log psi)."""
        self._need_y()
        return self.profile.gradient(self._log_scale, self._log_psi)

    def posterior(self) -> PosteriorSummary:
        return PosteriorSummary(
            weights=self._weights.copy(),
            weight_covariance=self.weight_covariance(),
            log_marginal=self.log_marginal(),
        )

    def weight_covariance(self) -> np.ndarray:
        """Posterior covariance of the weights, equal to V^-1 (Woodbury)."""
        return self.profile.marginal_inverse(self._log_scale, self._log_psi)

    def predict(self, X_new, variance: bool = False):
        """Posterior mean (and optionally pointwise variance) at new inputs."""
        Xq = np.asarray(X_new, dtype=float)
        if Xq.size == 0:
            K = np.zeros((0, self.n))
            mean = np.zeros(0)
        else:
            Xq = as_rows(Xq)
            K = cross_gram(self.kernel, self.X, Xq)
            mean = self._f0_fn(Xq) + self.scale * (K @ self._weights)
        if not variance:
            return mean
        v = self.profile.eigenvalues(self._log_scale, self._log_psi)
        T = self.profile._RU.T @ K.T
        var = self.scale**2 * np.einsum("ij,ij->j", T, T / v[:, None])
        return mean, np.maximum(var, 0.0)

    def fitted(self) -> np.ndarray:
        """Posterior mean at the training inputs."""
        return self._f0_train + self.scale * (self.gram.values @ self._weights)

    # -- prior -------------------------------------------------------------

    def sample_prior(self, X_query, rng=None, n_draws: int = 1) -> np.ndarray:
        """Draws of the prior regression function at query points.

        Weights are drawn N(0, Psi) through the structure factor, so a
        fixed generator state reproduces draws bit for bit.
        """
        rng = np.random.default_rng(rng)
        Xq = as_rows(X_query)
        K = cross_gram(self.kernel, self.X, Xq)
        R = self.error.structure_factor(self.n)
        xi = rng.standard_normal((self.n, n_draws))
        psi = self.error.innovation_precision
        w = np.sqrt(psi) * (xi if R is None else R @ xi)
        draws = self._f0_fn(Xq)[:, None] + self.scale * (K @ w)
        return draws[:, 0] if n_draws == 1 else draws.T

    def prior_variance(self, X_query) -> np.ndarray:
        """Prior pointwise variance scale^2 h_n(x, x) at query points."""
        Xq = as_rows(X_query)
        K = cross_gram(self.kernel, self.X, Xq)
        P = precision_matrix(self.error, self.n)
        return self.scale**2 * np.einsum("ij,jk,ik->i", K, P, K)

    # -- parameter information ---------------------------------------------

    def param_fisher_info(self) -> np.ndarray:
        """Expected information for (log scale, log psi), analytic path."""
        return self.profile.fisher_information(self._log_scale, self._log_psi)

    def asymptotic_se(self) -> np.ndarray:
        """Asymptotic standard errors from the inverse information matrix."""
        U = self.param_fisher_info()
        try:
            cov = np.linalg.inv(U)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular parameter information matrix") from exc
        cond = np.linalg.cond(U)
        if not np.isfinite(cond) or cond > 1e12:
            raise NumericalBreakdown("singular parameter information matrix")
        return np.sqrt(np.diag(cov))

    def marginal_covariance_at(self, scale: float, psi: float) -> np.ndarray:
        """Dense V = scale^2 H Psi H + Psi^-1 at given hyperparameters."""
        H = self.gram.values
        err = self.error.with_innovation_precision(psi)
        P = precision_matrix(err, self.n)
        return scale**2 * (H @ P @ H) + covariance_matrix(err, self.n)

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        """Versioned JSON document sufficient to reproduce predictions."""
        if self._f0_kind == "callable":
            raise ValueError("models with a callable prior mean cannot be serialized")
        value = self._f0_data if self._f0_kind == "constant" else list(self._f0_data)
        doc = {
            "format": "ipriorkit-model",
            "version": 1,
            "kernel": _kernel_to_dict(self.kernel),
            "error": _error_to_dict(self.error),
            "scale": self.scale,
            "prior_mean": {"kind": self._f0_kind, "value": value},
            "X_train": self.X.tolist(),
            "weights": self._weights.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "IPriorModel":
        doc = json.loads(text)
        if doc.get("format") != "ipriorkit-model":
            raise ValueError("not an ipriorkit model document")
        if doc.get("version") != 1:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        kernel = _kernel_from_dict(doc["kernel"])
        error = _error_from_dict(doc["error"])
        pm = doc["prior_mean"]
        prior_mean = pm["value"] if pm["kind"] == "constant" else np.asarray(pm["value"])
        return cls(
            kernel,
            error,
            doc["scale"],
            np.asarray(doc["X_train"], dtype=float),
            y=None,
            prior_mean=prior_mean,
            weights=np.asarray(doc["weights"], dtype=float),
        )

    def _need_y(self):
        if self.y is None:
            raise ValueError("this operation needs the training response")


def log_marginal_likelihood(H, error: ErrorModel, scale: float, y, f0_values) -> float:
    """Evidence for given Gram values, error model and scale (standalone op)."""
    H = np.asarray(H, dtype=float)
    resid = np.asarray(y, dtype=float) - np.asarray(f0_values, dtype=float)
    prof = MarginalProfile(H, error, resid, mode="iprior")
    return prof.loglik(float(np.log(scale)), float(np.log(error.innovation_precision)))


def param_fisher_info_fd(build_cov, theta, rel_step: float = 1e-5) -> np.ndarray:
    """Expected information for an arbitrary parameterization, by central differences.

    build_cov maps a parameter vector to the dense marginal covariance.
    """
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    V = build_cov(theta)
    n = V.shape[0]
    derivs = []
    for j in range(k):
        h = rel_step * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        derivs.append((build_cov(tp) - build_cov(tm)) / (2.0 * h))
    Vinv_d = [solve_spd(V, D) for D in derivs]
    U = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            U[i, j] = U[j, i] = 0.5 * np.sum(Vinv_d[i] * Vinv_d[j].T)
    return U


# -- kernel / error (de)serialization helpers --------------------------------


def _metric_to_dict(metric: Metric) -> dict:
    if isinstance(metric, EuclideanMetric):
        return {"kind": "euclidean"}
    if isinstance(metric, SobolevMetric):
        return {"kind": "sobolev", "spacing": metric.spacing}
    if isinstance(metric, MahalanobisMetric):
        return {"kind": "mahalanobis", "matrix": metric.matrix.tolist()}
    raise TypeError(f"cannot serialize metric {type(metric).__name__}")


def _metric_from_dict(d: dict) -> Metric:
    kind = d["kind"]
    if kind == "euclidean":
        return EuclideanMetric()
    if kind == "sobolev":
        return SobolevMetric(spacing=d["spacing"])
    if kind == "mahalanobis":
        return MahalanobisMetric(np.asarray(d["matrix"], dtype=float))
    raise ValueError(f"unknown metric kind {kind!r}")


def _kernel_to_dict(kernel: Kernel) -> dict:
    if isinstance(kernel, CenteredKernel):
        return {
            "kind": "centered",
            "base": _kernel_to_dict(kernel.base),
            "anchors": kernel.anchors.tolist(),
        }
    if isinstance(kernel, CanonicalKernel):
        return {"kind": "canonical", "metric": _metric_to_dict(kernel.metric)}
    if isinstance(kernel, FbmKernel):
        return {"kind": "fbm", "hurst": kernel.hurst, "metric": _metric_to_dict(kernel.metric)}
    if isinstance(kernel, SqExpKernel):
        return {
            "kind": "sqexp",
            "bandwidth": kernel.bandwidth,
            "exponent": kernel.exponent,
            "metric": _metric_to_dict(kernel.metric),
        }
    raise TypeError(f"cannot serialize kernel {type(kernel).__name__}")


def _kernel_from_dict(d: dict) -> Kernel:
    kind = d["kind"]
    if kind == "centered":
        return CenteredKernel(_kernel_from_dict(d["base"]), np.asarray(d["anchors"], dtype=float))
    if kind == "canonical":
        return CanonicalKernel(metric=_metric_from_dict(d["metric"]))
    if kind == "fbm":
        return FbmKernel(hurst=d["hurst"], metric=_metric_from_dict(d["metric"]))
    if kind == "sqexp":
        return SqExpKernel(
            bandwidth=d["bandwidth"],
            exponent=d["exponent"],
            metric=_metric_from_dict(d["metric"]),
        )
    raise ValueError(f"unknown kernel kind {kind!r}")


def _error_to_dict(error: ErrorModel) -> dict:
    if isinstance(error, IID):
        return {"kind": "iid", "precision": error.precision}
    if isinstance(error, AR1):
        return {"kind": "ar1", "alpha": error.alpha, "innovation_sd": error.innovation_sd}
    if isinstance(error, MA1):
        return {"kind": "ma1", "alpha": error.alpha, "innovation_sd": error.innovation_sd}
    raise TypeError(f"cannot serialize error model {type(error).__name__}")


def _error_from_dict(d: dict) -> ErrorModel:
    kind = d["kind"]
    if kind == "iid":
        return IID(precision=d["precision"])
    if kind == "ar1":
        return AR1(alpha=d["alpha"], innovation_sd=d["innovation_sd"])
    if kind == "ma1":
        return MA1(alpha=d["alpha"], innovation_sd=d["innovation_sd"])
    raise ValueError(f"unknown error kind {kind!r}")
