"""Deterministic linear-algebra and summary-statistic primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError, DomainError, InvalidCovariance, InvalidInput

PD_RTOL = 1e-10
SYM_RTOL = 1e-12


def as_square(mat, name="matrix") -> np.ndarray:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInput(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_symmetric(mat, name="matrix", rtol=SYM_RTOL) -> np.ndarray:
    arr = as_square(mat, name)
    scale = max(np.max(np.abs(arr)), 1.0)
    if np.max(np.abs(arr - arr.T)) > rtol * scale:
        raise InvalidInput(f"{name} is not symmetric")
    return arr


def check_covariance(mat, name="covariance") -> np.ndarray:
    """Return ``mat`` as a symmetric array after checking positive definiteness."""
    arr = check_symmetric(mat, name, rtol=1e-10)
    if not np.all(np.isfinite(arr)):
        raise InvalidCovariance(f"{name} has non-finite entries")
    vals = np.linalg.eigvalsh(arr)
    if vals[0] <= PD_RTOL * vals[-1] or vals[-1] <= 0:
        raise InvalidCovariance(f"{name} is not positive definite (eigenvalues {vals[0]:.3g}..{vals[-1]:.3g})")
    return arr


def is_positive_definite(mat) -> bool:
    try:
        check_covariance(mat)
    except InvalidInput:
        return False
    return True


def induce_correlation(cov) -> np.ndarray:
    """Rescale a covariance (or a stack of them) to unit diagonal."""
    arr = np.asarray(cov, dtype=float)
    diag = np.diagonal(arr, axis1=-2, axis2=-1)
    if np.any(diag <= 0):
        raise InvalidCovariance("diagonal entries must be positive")
    sd = np.sqrt(diag)
    corr = arr / (sd[..., :, None] * sd[..., None, :])
    idx = np.arange(arr.shape[-1])
    corr[..., idx, idx] = 1.0
    return corr


def compound_symmetry(K: int, rho: float) -> np.ndarray:
    """Correlation matrix with every off-diagonal entry equal to ``rho``."""
    if K < 2:
        raise DomainError("K must be at least 2")
    lower = -1.0 / (K - 1)
    if not (lower < rho < 1.0):
        raise DomainError(f"rho={rho} outside the open interval ({lower:.4g}, 1)")
    P = np.full((K, K), float(rho))
    np.fill_diagonal(P, 1.0)
    return P


@dataclass(frozen=True)
class SufficientStats:
    """Zero-mean Gaussian sufficient statistics.

    ``mean_cross`` is the average outer product, ``scatter`` the summed one.
    """

    n: int
    mean_cross: np.ndarray
    scatter: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean_cross.shape[0]

    def combine(self, other: "SufficientStats") -> "SufficientStats":
        n = self.n + other.n
        scatter = self.scatter + other.scatter
        mean_cross = scatter / n if n else np.zeros_like(scatter)
        return SufficientStats(n, mean_cross, scatter)

    @classmethod
    def empty(cls, K: int) -> "SufficientStats":
        z = np.zeros((K, K))
        return cls(0, z, z.copy())


def sufficient_stats(data) -> SufficientStats:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError("data must be an n x K matrix")
    if x.shape[0] < 1:
        raise DataError("need at least one observation")
    if not np.all(np.isfinite(x)):
        raise DataError("data contain non-finite entries")
    scatter = x.T @ x
    scatter = 0.5 * (scatter + scatter.T)
    return SufficientStats(x.shape[0], scatter / x.shape[0], scatter)


def log_sum_exp(values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty sequence")
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + math.log(np.sum(np.exp(v - m))))


def hpd_interval(samples, prob: float, *, min_samples: int = 10) -> tuple[float, float]:
    """Shortest window holding ``ceil(prob * N)`` sorted samples.

    Ties go to the leftmost window.
    """
    if not 0.0 < prob < 1.0:
        raise DomainError("prob must lie in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    N = x.size
    if N < max(min_samples, 1):
        raise DataError(f"need at least {min_samples} samples, got {N}")
    lo, hi = hpd_bounds(x[None, :], prob)
    return float(lo[0]), float(hi[0])


def hpd_bounds(sorted_rows: np.ndarray, prob: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise shortest windows over pre-sorted rows (vectorised helper)."""
    N = sorted_rows.shape[-1]
    m = min(N, math.ceil(prob * N - 1e-12))
    widths = sorted_rows[..., m - 1:] - sorted_rows[..., : N - m + 1]
    start = np.argmin(widths, axis=-1)  # argmin picks the first minimum
    lo = np.take_along_axis(sorted_rows, start[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(sorted_rows, (start + m - 1)[..., None], axis=-1)[..., 0]
    return lo, hi


def correlation_bound(cov) -> float:
    """Upper bound on absolute induced correlations from the condition number."""
    vals = np.linalg.eigvalsh(as_square(cov, "covariance"))
    if vals[0] <= 0:
        raise InvalidCovariance("covariance is not positive definite")
    kappa = vals[-1] / vals[0]
    return float((kappa - 1.0) / (kappa + 1.0))


class EigenDecomposition(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def eigen_descending(cov) -> EigenDecomposition:
    arr = check_symmetric(cov, "covariance", rtol=1e-10)
    vals, vecs = np.linalg.eigh(arr)
    return EigenDecomposition(vals[::-1].copy(), vecs[:, ::-1].copy())
