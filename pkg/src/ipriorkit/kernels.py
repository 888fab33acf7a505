"""Covariate metrics, kernel evaluation, empirical centering, and Gram matrices.

Metrics define the inner product on the covariate space (plain Euclidean,
first-derivative Sobolev for curves on a shared grid, Mahalanobis for
scale-free multivariate data).  Kernels are built on top of a metric:
the canonical (linear) kernel, the fractional-Brownian-motion family
indexed by a Hurst coefficient in (0, 1], and the squared-exponential
kernel.  Any kernel can be empirically centered on a set of anchor
points so that functions in the induced space average to zero over the
anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EuclideanMetric",
    "SobolevMetric",
    "MahalanobisMetric",
    "CanonicalKernel",
    "FbmKernel",
    "SqExpKernel",
    "CenteredKernel",
    "GramMatrix",
    "inner_product",
    "eval_kernel",
    "center_kernel",
    "gram",
    "cross_gram",
]

# Gram eigenvalues below SPECTRAL_FLOOR_REL * lambda_max are clipped to zero;
# anything below SPECTRAL_VALID_REL * lambda_max means the kernel is broken.
SPECTRAL_FLOOR_REL = 1e-12
SPECTRAL_VALID_REL = 1e-10

_DIFF_BLOCK = 64  # row block size for pairwise squared distances


def as_rows(X) -> np.ndarray:
    """Coerce a collection of points to a 2-d float array of row vectors.

    A 1-d array is read as n scalar points, one per entry.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    elif X.ndim != 2:
        raise ValueError(f"expected vectors or a matrix of row vectors, got ndim={X.ndim}")
    return X


def as_point(x) -> np.ndarray:
    """Coerce a single covariate point to a (1, d) row.

    A 1-d array is read as one d-dimensional vector.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim == 2 and x.shape[0] == 1:
        return x
    raise ValueError(f"expected a single vector, got shape {x.shape}")


class Metric:
    """Inner product on the covariate space."""

    def pairwise(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        """All inner products between rows of X and rows of X2."""
        raise NotImplementedError

    def norms_sq(self, X: np.ndarray) -> np.ndarray:
        """Squared norm of each row."""
        raise NotImplementedError

    def _check_dims(self, X, X2):
        if X.shape[1] != X2.shape[1]:
            raise ValueError(
                f"dimension mismatch: vectors of length {X.shape[1]} vs {X2.shape[1]}"
            )

    def dist_sq(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        """Pairwise squared distances, computed from differences.

        Going through differences (instead of the polarization identity)
        keeps the diagonal exactly zero for identical points, which the
        fractional kernels need: a rounding residue eps here would enter
        them as eps**hurst.
        """
        self._check_dims(X, X2)
        n = X.shape[0]
        out = np.empty((n, X2.shape[0]))
        for lo in range(0, n, _DIFF_BLOCK):
            hi = min(lo + _DIFF_BLOCK, n)
            diffs = X[lo:hi, None, :] - X2[None, :, :]
            out[lo:hi] = self.norms_sq(diffs.reshape(-1, X.shape[1])).reshape(hi - lo, -1)
        return out


@dataclass(frozen=True)
class EuclideanMetric(Metric):
    def pairwise(self, X, X2):
        self._check_dims(X, X2)
        return X @ X2.T

    def norms_sq(self, X):
        return np.einsum("ij,ij->i", X, X)


@dataclass(frozen=True)
class SobolevMetric(Metric):
    """First-derivative inner product for curves sampled on a uniform grid.

    <x, x'> = sum_i (dx_i/spacing) (dx'_i/spacing) * spacing, with dx the
    forward differences, i.e. a rectangle-rule quadrature of the integral
    of the product of first derivatives.
    """

    spacing: float = 1.0

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"grid spacing must be > 0, got {self.spacing}")

    def _diffs(self, X):
        if X.shape[1] < 2:
            raise ValueError("Sobolev inner product needs curves of length >= 2")
        return np.diff(X, axis=1)

    def pairwise(self, X, X2):
        self._check_dims(X, X2)
        return self._diffs(X) @ self._diffs(X2).T / self.spacing

    def norms_sq(self, X):
        D = self._diffs(X)
        return np.einsum("ij,ij->i", D, D) / self.spacing

    def dist_sq(self, X, X2):
        self._check_dims(X, X2)
        n = X.shape[0]
        DX, DX2 = self._diffs(X), self._diffs(X2)
        out = np.empty((n, X2.shape[0]))
        for lo in range(0, n, _DIFF_BLOCK):
            hi = min(lo + _DIFF_BLOCK, n)
            d = DX[lo:hi, None, :] - DX2[None, :, :]
            out[lo:hi] = np.einsum("ijk,ijk->ij", d, d) / self.spacing
        return out


@dataclass(frozen=True)
class MahalanobisMetric(Metric):
    """<x, x'> = x' M x with M symmetric positive definite."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("Mahalanobis matrix must be square")
        if not np.allclose(M, M.T, rtol=1e-10, atol=0.0):
            raise ValueError("Mahalanobis matrix must be symmetric")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Mahalanobis matrix must be positive definite") from exc
        object.__setattr__(self, "matrix", M)

    def pairwise(self, X, X2):
        self._check_dims(X, X2)
        if X.shape[1] != self.matrix.shape[0]:
            raise ValueError(
                f"dimension mismatch: vectors of length {X.shape[1]} vs "
                f"{self.matrix.shape[0]}x{self.matrix.shape[0]} metric matrix"
            )
        return X @ self.matrix @ X2.T

    def norms_sq(self, X):
        return np.einsum("ij,jk,ik->i", X, self.matrix, X)


def inner_product(x, xp, metric: Metric | None = None) -> float:
    """Inner product of two covariate vectors under a metric (default Euclidean)."""
    metric = metric or EuclideanMetric()
    return float(metric.pairwise(as_point(x), as_point(xp))[0, 0])


class Kernel:
    """Symmetric positive-definite kernel over a metric covariate space."""

    metric: Metric

    def pairwise(self, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, xp) -> float:
        return float(self.pairwise(as_point(x), as_point(xp))[0, 0])


@dataclass(frozen=True)
class CanonicalKernel(Kernel):
    """Linear kernel h(x, x') = <x, x'>; its space is the dual of the covariates."""

    metric: Metric = field(default_factory=EuclideanMetric)

    def pairwise(self, X, X2):
        return self.metric.pairwise(X, X2)


@dataclass(frozen=True)
class FbmKernel(Kernel):
    """Fractional-Brownian-motion covariance kernel.

    h(x, x') = -(|x - x'|^2g - |x|^2g - |x'|^2g) / 2 with g the Hurst
    coefficient in (0, 1]; g = 1 reduces to the canonical kernel.
    """

    hurst: float = 0.5
    metric: Metric = field(default_factory=EuclideanMetric)

    def __post_init__(self):
        if not 0.0 < self.hurst <= 1.0:
            raise ValueError(f"Hurst coefficient must be in (0, 1], got {self.hurst}")

    def pairwise(self, X, X2):
        g = self.hurst
        d2 = self.metric.dist_sq(X, X2)
        np.clip(d2, 0.0, None, out=d2)
        nx = self.metric.norms_sq(X)
        ny = self.metric.norms_sq(X2)
        return -0.5 * (d2**g - nx[:, None] ** g - ny[None, :] ** g)


@dataclass(frozen=True)
class SqExpKernel(Kernel):
    """Squared-exponential kernel exp(-|x - x'|^(2*exponent) / (2*bandwidth^2))."""

    bandwidth: float
    exponent: float = 1.0
    metric: Metric = field(default_factory=EuclideanMetric)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.exponent > 0:
            raise ValueError(f"exponent must be > 0, got {self.exponent}")

    def pairwise(self, X, X2):
        d2 = self.metric.dist_sq(X, X2)
        np.clip(d2, 0.0, None, out=d2)
        if self.exponent != 1.0:
            d2 **= self.exponent
        return np.exp(-d2 / (2.0 * self.bandwidth**2))


@dataclass(frozen=True)
class CenteredKernel(Kernel):
    """Kernel double-centered on anchor points.

    h_c(x, x') = h(x, x') - mean_i h(x, a_i) - mean_j h(x', a_j)
                 + mean_ij h(a_i, a_j),
    so that functions of the induced space sum to zero over the anchors.
    Queries far outside the anchor hull see a constant trend: the
    correction terms are evaluated verbatim wherever asked.
    """

    base: Kernel
    anchors: np.ndarray

    def __post_init__(self):
        A = as_rows(self.anchors)
        if A.shape[0] == 0:
            raise ValueError("centering requires at least one anchor point")
        object.__setattr__(self, "anchors", A)
        KA = self.base.pairwise(A, A)
        object.__setattr__(self, "_anchor_mean", float(KA.mean()))

    @property
    def metric(self):
        return self.base.metric

    def _anchor_row_means(self, X):
        return self.base.pairwise(X, self.anchors).mean(axis=1)

    def pairwise(self, X, X2):
        K = self.base.pairwise(X, X2)
        mx = self._anchor_row_means(X)
        my = self._anchor_row_means(X2)
        return K - mx[:, None] - my[None, :] + self._anchor_mean


def eval_kernel(spec: Kernel, x, xp) -> float:
    """Evaluate a kernel at a single pair of covariate points."""
    return spec(x, xp)


def center_kernel(spec: Kernel, anchors) -> CenteredKernel:
    """Center a kernel empirically on the given anchor points."""
    return CenteredKernel(spec, as_rows(anchors))


@dataclass(frozen=True)
class GramMatrix:
    """Symmetrized kernel matrix with a small spectral cleanup applied.

    floor_applied is the clipping threshold actually used (0.0 when the
    spectrum was already clean).
    """

    values: np.ndarray
    floor_applied: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[0]


def gram(spec: Kernel, X) -> GramMatrix:
    """Assemble the kernel matrix over the rows of X.

    The result is symmetrized as (K + K')/2 and eigenvalues below
    1e-12 * lambda_max are clipped to zero; round-off on the analytically
    positive-definite fractional kernels otherwise produces tiny negative
    eigenvalues that break Cholesky downstream.
    """
    X = as_rows(X)
    if X.shape[0] == 0:
        raise ValueError("gram requires at least one point")
    K = spec.pairwise(X, X)
    bad = ~np.isfinite(K)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"non-finite kernel value at entry ({i}, {j}): {K[i, j]}")
    K = 0.5 * (K + K.T)
    w, V = np.linalg.eigh(K)
    lam_max = max(float(w[-1]), 0.0)
    if w[0] < -SPECTRAL_VALID_REL * lam_max:
        raise ValueError(
            f"kernel matrix is not positive semidefinite: min eigenvalue {w[0]:.3e} "
            f"vs max {lam_max:.3e}"
        )
    thr = SPECTRAL_FLOOR_REL * lam_max
    if w[0] < thr:
        w = np.where(w < thr, 0.0, w)
        K = (V * w) @ V.T
        K = 0.5 * (K + K.T)
        return GramMatrix(values=K, floor_applied=thr)
    return GramMatrix(values=K, floor_applied=0.0)


def cross_gram(spec: Kernel, X_train, X_new) -> np.ndarray:
    """Kernel values h(x_new_k, x_train_i) as an m-by-n matrix.

    The spec must be the exact training kernel, centering anchors included.
    """
    Xt = as_rows(X_train)
    Xn = np.asarray(X_new, dtype=float)
    if Xn.size == 0:
        return np.zeros((0, Xt.shape[0]))
    Xn = as_rows(Xn)
    return spec.pairwise(Xn, Xt)
