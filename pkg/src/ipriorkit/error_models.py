"""Error precision structures: iid, AR(1), and MA(1).

Every family factors its precision as psi * Q where psi is a scalar
innovation precision and Q a unit-scale structure matrix.  That split is
what lets the likelihood machinery profile out psi cheaply.

The AR(1)/MA(1) pair are duals: with A the lower-triangular matrix of
autoregressive powers and B the unit-diagonal bidiagonal moving-average
factor, A B' = A' B = I, so the covariance of one process is the
precision of the other (up to the innovation-variance swap).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "IID",
    "AR1",
    "MA1",
    "precision_matrix",
    "covariance_matrix",
    "ar1_fn_norm",
]


def ar_coeff_matrix(alpha: float, n: int) -> np.ndarray:
    """Lower-triangular cumulative filter: entry (i, j) = alpha^(i-j) for i >= j."""
    idx = np.arange(n)
    expo = idx[:, None] - idx[None, :]
    with np.errstate(invalid="ignore"):
        A = np.where(expo >= 0, np.sign(alpha) ** np.abs(expo) * np.abs(alpha) ** np.abs(expo), 0.0)
    if alpha == 0.0:
        A = np.eye(n)
    return np.tril(A)


def ma_coeff_matrix(theta: float, n: int) -> np.ndarray:
    """Unit diagonal with theta on the first superdiagonal (last row stays unit)."""
    B = np.eye(n)
    B += np.diag(np.full(n - 1, theta), k=1)
    return B


class ErrorModel:
    """Common surface for the three error families."""

    def structure(self, n: int) -> np.ndarray:
        """Unit-precision structure Q, so that the precision is psi * Q."""
        raise NotImplementedError

    def structure_factor(self, n: int) -> np.ndarray | None:
        """Triangular R with Q = R R'; None means the identity."""
        raise NotImplementedError

    @property
    def innovation_precision(self) -> float:
        raise NotImplementedError

    def with_innovation_precision(self, psi: float) -> "ErrorModel":
        raise NotImplementedError


@dataclass(frozen=True)
class IID(ErrorModel):
    """Independent errors with common precision psi."""

    precision: float = 1.0

    def __post_init__(self):
        if not self.precision > 0:
            raise ValueError(f"precision must be > 0, got {self.precision}")

    def structure(self, n):
        return np.eye(n)

    def structure_factor(self, n):
        return None

    @property
    def innovation_precision(self):
        return self.precision

    def with_innovation_precision(self, psi):
        return IID(precision=float(psi))


@dataclass(frozen=True)
class AR1(ErrorModel):
    """Autoregressive errors e_1 = u_1, e_i = alpha*e_{i-1} + u_i, u_i ~ N(0, sd^2).

    |alpha| = 1 is allowed (the random-walk limit) but flags the model as a
    non-invertible limit: the prior then has essentially the same law as the
    errors and the regression function is not identified.
    """

    alpha: float
    innovation_sd: float = 1.0

    def __post_init__(self):
        if not -1.0 <= self.alpha <= 1.0:
            raise ValueError(f"AR(1) coefficient must be in [-1, 1], got {self.alpha}")
        if not self.innovation_sd > 0:
            raise ValueError(f"innovation sd must be > 0, got {self.innovation_sd}")

    @property
    def random_walk_limit(self) -> bool:
        return abs(self.alpha) == 1.0

    def structure(self, n):
        B = ma_coeff_matrix(-self.alpha, n)
        return B @ B.T

    def structure_factor(self, n):
        # exact triangular factor, unit determinant
        return ma_coeff_matrix(-self.alpha, n)

    @property
    def innovation_precision(self):
        return self.innovation_sd**-2

    def with_innovation_precision(self, psi):
        return replace(self, innovation_sd=float(psi) ** -0.5)


@dataclass(frozen=True)
class MA1(ErrorModel):
    """Moving-average errors e_i = u_i + alpha*u_{i+1} (e_n = u_n), u_i ~ N(0, sd^2)."""

    alpha: float
    innovation_sd: float = 1.0

    def __post_init__(self):
        if not self.innovation_sd > 0:
            raise ValueError(f"innovation sd must be > 0, got {self.innovation_sd}")

    def structure(self, n):
        A = ar_coeff_matrix(-self.alpha, n)
        return A @ A.T

    def structure_factor(self, n):
        return ar_coeff_matrix(-self.alpha, n)

    @property
    def innovation_precision(self):
        return self.innovation_sd**-2

    def with_innovation_precision(self, psi):
        return replace(self, innovation_sd=float(psi) ** -0.5)


def precision_matrix(model: ErrorModel, n: int) -> np.ndarray:
    """Dense error precision for a sample of size n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return model.innovation_precision * model.structure(n)


def covariance_matrix(model: ErrorModel, n: int) -> np.ndarray:
    """Dense error covariance for a sample of size n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if isinstance(model, IID):
        return np.eye(n) / model.precision
    if isinstance(model, AR1):
        A = ar_coeff_matrix(model.alpha, n)
        return model.innovation_sd**2 * (A @ A.T)
    if isinstance(model, MA1):
        B = ma_coeff_matrix(model.alpha, n)
        return model.innovation_sd**2 * (B @ B.T)
    raise TypeError(f"unknown error model {type(model).__name__}")


def ar1_fn_norm(w, model: AR1) -> float:
    """Closed-form data-space norm of a span element with weights w under AR(1) errors.

    Equals w' Sigma w with Sigma the AR(1) error covariance: the inner tail
    sums t_i = sum_{j>=i} alpha^(j-i) w_j are accumulated by backward
    recursion, and the result is sd^2 * sum_i t_i^2.
    """
    if not isinstance(model, AR1):
        raise TypeError("the closed-form norm is specific to AR(1) errors")
    w = np.asarray(w, dtype=float)
    total = 0.0
    tail = 0.0
    for wi in w[::-1]:
        tail = wi + model.alpha * tail
        total += tail * tail
    return model.innovation_sd**2 * total


def solve_spd(mat: np.ndarray, rhs: np.ndarray, jitter_tries: int = 1) -> np.ndarray:
    """Cholesky solve with one jitter retry; raises on genuine singularity."""
    try:
        return cho_solve(cho_factor(mat, lower=True), rhs)
    except np.linalg.LinAlgError:
        pass
    if jitter_tries > 0:
        jitter = 1e-10 * np.trace(mat) / mat.shape[0]
        try:
            return cho_solve(cho_factor(mat + jitter * np.eye(mat.shape[0]), lower=True), rhs)
        except np.linalg.LinAlgError:
            pass
    raise np.linalg.LinAlgError("matrix is singular (even after jitter retry)")
