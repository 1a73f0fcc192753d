"""Dense symmetric-positive-definite linear algebra helpers.

Every kernel matrix in this package is factorized through this module so
that jitter policy and failure behaviour are uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

# Relative jitter applied wherever a kernel matrix is factorized.  Kernel
# matrices here can be arbitrarily close to singular (e.g. a vanishing
# smoothness offset), so a small regularization is always on.
DEFAULT_JITTER = 1e-8

_SYMMETRY_RTOL = 1e-12


class NotPositiveDefinite(Exception):
    """Raised when a matrix has no Cholesky factor even after jitter."""


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix."""

    lower: np.ndarray

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def cholesky(a: np.ndarray, jitter: float = 0.0) -> SpdFactor:
    """Factor ``a + jitter * mean(diag(a)) * I`` as L @ L.T.

    Parameters
    ----------
    a : (n, n) array
        Symmetric matrix (checked to relative tolerance 1e-12).
    jitter : float
        Nonnegative relative diagonal inflation.

    Raises
    ------
    NotPositiveDefinite
        If a pivot fails after the jitter has been applied.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > _SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    if jitter > 0:
        a = a + jitter * np.mean(np.diag(a)) * np.eye(a.shape[0])
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return SpdFactor(lower=lower)


def factor_spd(a: np.ndarray, jitter: float = DEFAULT_JITTER) -> SpdFactor:
    """Factor a kernel matrix with the default jitter, retrying once at 100x.

    The retry keeps optimizer line searches alive in near-singular regimes;
    a second failure is a genuine rank deficiency and surfaces as
    :class:`NotPositiveDefinite`.
    """
    try:
        return cholesky(a, jitter)
    except NotPositiveDefinite:
        return cholesky(a, 100.0 * jitter)


def solve(factor: SpdFactor, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the factor of A; b may be a vector or matrix."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise ValueError(f"dimension mismatch: factor is {factor.n}, b has leading {b.shape[0]}")
    z = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower.T, z, lower=False)


def log_det(factor: SpdFactor) -> float:
    """log-determinant of the factored matrix: 2 * sum(log diag(L))."""
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


def extreme_eigenvalues(a: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    eig = np.linalg.eigvalsh(np.asarray(a, dtype=float))
    return float(eig[0]), float(eig[-1])
