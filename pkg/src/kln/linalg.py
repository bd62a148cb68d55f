"""Dense float64 matrix arithmetic and SPD solves used by every numeric module.

Everything here is a pure function of its inputs and safe to call from
multiple threads.  All work is done in 64-bit floats; gradient checking at
1e-4 tolerance does not survive float32.
"""

import numpy as np
from scipy.linalg import lapack

from .errors import (
    AsymmetricMatrixError,
    NonFiniteError,
    NotPositiveDefiniteError,
    ShapeError,
)

# Max allowed |A - A^T| entry before an SPD solve; anything larger is a
# caller bug rather than round-off.
SYMMETRY_TOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("matmul: product overflowed to non-finite values")
    return out


class SpdFactor:
    """Cholesky factor of an SPD matrix, reusable across several solves."""

    def __init__(self, a):
        a = as_matrix(a, "a")
        n = a.shape[0]
        if a.shape[1] != n:
            raise ShapeError(f"spd_solve: matrix must be square, got {a.shape}")
        asym = np.max(np.abs(a - a.T)) if n else 0.0
        if asym > SYMMETRY_TOL:
            raise AsymmetricMatrixError(
                f"spd_solve: max |A - A^T| = {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"
            )
        c, info = lapack.dpotrf(a, lower=1)
        if info > 0:
            raise NotPositiveDefiniteError(pivot=info - 1)
        if info < 0:
            raise ValueError(f"spd_solve: invalid argument {-info} to dpotrf")
        self.n = n
        self._c = c

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != self.n:
            raise ShapeError(f"spd_solve: rhs shape {b.shape} does not match ({self.n},...)")
        x, info = lapack.dpotrs(self._c, b, lower=1)
        if info != 0:
            raise ValueError(f"spd_solve: dpotrs failed with info={info}")
        return x

    def solve_from_right(self, b) -> np.ndarray:
        """b @ A^-1 for symmetric A (solve on the transpose)."""
        return self.solve(np.ascontiguousarray(b.T)).T


def spd_factor(a) -> SpdFactor:
    return SpdFactor(a)


def spd_solve(a, b) -> np.ndarray:
    """Solve a @ X = b for symmetric positive-definite ``a``.

    Uses a Cholesky factorization (never an explicit inverse).  Raises
    NotPositiveDefiniteError carrying the 0-based pivot index when the
    factorization breaks down, and AsymmetricMatrixError when ``a`` is
    asymmetric beyond SYMMETRY_TOL.
    """
    b = as_matrix(b, "b")
    return SpdFactor(a).solve(b)


def trace_of_product(a, b) -> float:
    """Tr(a @ b) as sum_ij a_ij * b_ji, without forming the product."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0] or b.shape[1] != a.shape[0]:
        raise ShapeError(
            f"trace_of_product: need (m,n) and (n,m) operands, got {a.shape} and {b.shape}"
        )
    return float(np.sum(a * b.T))
