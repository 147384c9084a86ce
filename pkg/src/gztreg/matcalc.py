"""
Symmetric matrix calculus.

Spectral matrix exponential/logarithm, the ``vecl`` operator and correlation
matrix validation.  Every function accepts a single ``(m, m)`` matrix or a
stack of shape ``(..., m, m)``; stacking is how the likelihood code evaluates
many equally sized groups at once.
"""
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import (BadLengthError, NoConvergenceError, NonFiniteError,
                     NotPositiveDefiniteError)

# relative SPD threshold: lambda_min <= SPD_TOL * max(1, lambda_max) is rejected
SPD_TOL = 1e-12
# eigenvalue gap below which divided differences use the confluent limit
EIG_GAP_TOL = 1e-10


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray   # (..., m), ascending
    eigenvectors: np.ndarray  # (..., m, m), columns orthonormal


def symmetrize(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _check_finite(A):
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("matrix contains NaN or Inf")


def eigh(A) -> EigenDecomposition:
    """Eigen-decomposition of a symmetric matrix (or stack), ascending order."""
    A = symmetrize(A)
    _check_finite(A)
    try:
        lam, Q = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"eigensolver failed: {exc}") from exc
    return EigenDecomposition(lam, Q)


def spectral_apply(Q, values):
    """Recompose ``Q diag(values) Q'`` for (stacks of) eigenpairs."""
    return symmetrize((Q * values[..., None, :]) @ np.swapaxes(Q, -1, -2))


def _check_spd(lam):
    lam_max = np.max(lam, axis=-1)
    bad = lam[..., 0] <= SPD_TOL * np.maximum(1.0, lam_max)
    if np.any(bad):
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (min eigenvalue "
            f"{np.min(lam[..., 0]):.3e})")


def matrix_log(A):
    """Matrix logarithm of a symmetric positive definite matrix."""
    lam, Q = eigh(A)
    _check_spd(lam)
    return spectral_apply(Q, np.log(lam))


def matrix_exp(A):
    """Matrix exponential of a symmetric matrix."""
    lam, Q = eigh(A)
    return spectral_apply(Q, np.exp(lam))


def is_spd(A) -> bool:
    try:
        _check_spd(eigh(A).eigenvalues)
    except NotPositiveDefiniteError:
        return False
    return True


# ---------------------------------------------------------------------------
# vecl: column-major strict lower triangle
#   (2,1),(3,1),...,(m,1),(3,2),...,(m,m-1)   (1-based)

@lru_cache(maxsize=None)
def vecl_indices(m):
    """Row and column indices (0-based) of the vecl ordering for dimension m.

    ``np.tril_indices`` is row-major, so the pairs are re-sorted by column.
    The returned arrays are cached and read-only.
    """
    rows, cols = np.tril_indices(m, -1)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def n_pairs(m):
    return m * (m - 1) // 2


def dim_from_pairs(length):
    """Recover m from m(m-1)/2; raise BadLengthError if not triangular."""
    m = int(round((1 + np.sqrt(1 + 8 * length)) / 2))
    if n_pairs(m) != length or m < 1:
        raise BadLengthError(f"length {length} is not m(m-1)/2 for any m")
    return m


def vecl(A):
    A = np.asarray(A, dtype=float)
    r, c = vecl_indices(A.shape[-1])
    return A[..., r, c]


def vecl_inverse(v, diagonal):
    """Symmetric matrix with strict lower triangle ``v`` and given diagonal."""
    v = np.asarray(v, dtype=float)
    diagonal = np.asarray(diagonal, dtype=float)
    m = dim_from_pairs(v.shape[-1])
    if diagonal.shape[-1] != m:
        raise BadLengthError(
            f"diagonal has length {diagonal.shape[-1]}, expected {m}")
    shape = np.broadcast_shapes(v.shape[:-1], diagonal.shape[:-1])
    out = np.zeros(shape + (m, m))
    r, c = vecl_indices(m)
    out[..., r, c] = v
    out[..., c, r] = v
    idx = np.arange(m)
    out[..., idx, idx] = diagonal
    return out


def check_correlation(R, tol=SPD_TOL):
    """Validate and return ``R`` as a float correlation matrix (or stack)."""
    R = np.asarray(R, dtype=float)
    if R.ndim < 2 or R.shape[-1] != R.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {R.shape}")
    _check_finite(R)
    if not np.array_equal(R, np.swapaxes(R, -1, -2)):
        if np.max(np.abs(R - np.swapaxes(R, -1, -2))) > 1e-12:
            raise ValueError("correlation matrix is not symmetric")
        R = symmetrize(R)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    if np.max(np.abs(d - 1.0)) > 1e-10:
        raise ValueError("correlation matrix diagonal must be 1")
    R = R.copy()
    idx = np.arange(R.shape[-1])
    R[..., idx, idx] = 1.0
    if R.shape[-1] > 1:
        off = vecl(R)
        if np.any(np.abs(off) >= 1.0):
            raise NotPositiveDefiniteError("off-diagonal entries must lie in (-1, 1)")
    lam = np.linalg.eigvalsh(R)
    if np.any(lam[..., 0] <= tol):
        raise NotPositiveDefiniteError(
            f"correlation matrix is not positive definite "
            f"(min eigenvalue {np.min(lam[..., 0]):.3e})")
    return R
