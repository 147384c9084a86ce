"""
Generalized z-transformation of correlation matrices.

``gzt_forward`` maps a correlation matrix R to gamma = vecl(log R), an
unconstrained real vector.  ``gzt_inverse`` recovers R by solving for the
diagonal x* that makes exp(G[x*]) a correlation matrix, using the fixed-point
iteration x <- x - log diag(exp(G[x])).  ``gzt_jacobian`` returns
d vecl(R) / d gamma through the Frechet derivative of the matrix exponential.

All three accept stacks of equally sized inputs along leading axes.
"""
from typing import NamedTuple

import numpy as np

from . import matcalc
from .errors import (BadPermutationError, MaxIterationsError, NoConvergenceError,
                     NonFiniteError)
from .matcalc import EIG_GAP_TOL, vecl, vecl_indices

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAXITER = 200
NEWTON_MAX_STEP = 1.0


class InverseResult(NamedTuple):
    R: np.ndarray            # correlation matrix (..., m, m)
    log_diag: np.ndarray     # x*, diagonal of log R (..., m)
    eig: matcalc.EigenDecomposition  # of log R
    iterations: int


def gzt_forward(R):
    """gamma = vecl(log R)."""
    R = matcalc.check_correlation(R)
    return vecl(matcalc.matrix_log(R))


def gzt_inverse(gamma, m=None, *, x0=None, tol=FIXED_POINT_TOL,
                maxiter=FIXED_POINT_MAXITER, method="fixed_point",
                full_output=False):
    """Correlation matrix R with vecl(log R) == gamma.

    Parameters
    ----------
    gamma : array_like, shape (..., m(m-1)/2)
    m : int, optional
        Matrix dimension.  Only needed to disambiguate ``m == 1`` (empty
        gamma); otherwise inferred from the trailing length.
    x0 : array_like, optional
        Starting diagonal, shape (..., m); zero by default.  Any start
        converges, a nearby one converges in fewer iterations.
    method : {"fixed_point", "newton"}
        ``"newton"`` replaces the plain update by a Newton step on
        log diag(exp(G[x])) = 0, using the diagonal block of the Frechet
        derivative of exp.  Same root, quadratic instead of linear rate.
    full_output : bool
        If True return an :class:`InverseResult` with the diagonal of log R,
        its eigen-decomposition and the number of fixed-point iterations.
    """
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise NonFiniteError("gamma contains NaN or Inf")
    if m is None:
        m = matcalc.dim_from_pairs(gamma.shape[-1])
    batch = gamma.shape[:-1]
    x = np.zeros(batch + (m,)) if x0 is None else \
        np.array(np.broadcast_to(x0, batch + (m,)), dtype=float)
    if method not in ("fixed_point", "newton"):
        raise ValueError(f"unknown method {method!r}")
    newton = method == "newton"
    iterations = 0
    if m > 1:
        G = matcalc.vecl_inverse(gamma, x)
        idx = np.arange(m)
        for iterations in range(1, maxiter + 1):
            G[..., idx, idx] = x
            try:
                lam, Q = np.linalg.eigh(G)
            except np.linalg.LinAlgError as exc:
                raise NoConvergenceError(f"eigensolver failed: {exc}") from exc
            diag_exp = np.einsum("...ja,...a->...j", Q * Q, np.exp(lam))
            resid = np.log(diag_exp)
            if not np.all(np.isfinite(resid)):
                raise NonFiniteError("inverse transform overflowed")
            step = resid
            if newton:
                Q2 = np.einsum("...ja,...la->...jla", Q, Q)
                xi = divided_differences(lam)[..., None, :, :]
                dF = np.sum((Q2 @ xi) * Q2, axis=-1) / diag_exp[..., None]
                nstep = np.linalg.solve(dF, resid[..., None])[..., 0]
                # damped: cap the step length, fall back to the fixed-point
                # step if the linear solve breaks down
                size = np.max(np.abs(nstep), axis=-1, keepdims=True)
                ok = np.isfinite(size)
                scale = NEWTON_MAX_STEP / np.maximum(np.where(ok, size, 1.0), NEWTON_MAX_STEP)
                nstep = nstep * scale
                step = np.where(ok, nstep, resid)
            x = x - step
            if np.max(np.abs(step)) < tol:
                break
        else:
            raise MaxIterationsError(
                f"inverse transform did not converge in {maxiter} iterations "
                f"(last step {np.max(np.abs(step)):.3e})")
    G = matcalc.vecl_inverse(gamma, x) if m > 1 else x[..., None]
    eig = matcalc.eigh(G)
    R = matcalc.spectral_apply(eig.eigenvectors, np.exp(eig.eigenvalues))
    idx = np.arange(m)
    R[..., idx, idx] = 1.0
    if full_output:
        return InverseResult(R, x, eig, iterations)
    return R


def divided_differences(lam):
    """Matrix of (e^a - e^b)/(a - b), with the limit e^a on (near) ties."""
    a = lam[..., :, None]
    b = lam[..., None, :]
    d = a - b
    close = np.abs(d) < EIG_GAP_TOL
    safe = np.where(close, 1.0, d)
    # symmetric average of the two expm1 forms avoids cancellation
    xi = 0.5 * (np.exp(b) * np.expm1(safe) / safe
                + np.exp(a) * np.expm1(-safe) / -safe)
    limit = np.exp(0.5 * (a + b))
    return np.where(close, limit, xi)


def exp_frechet_matrix(eig):
    """A = d vec(exp G) / d vec(G) = (Q kron Q) Xi (Q kron Q)'."""
    lam, Q = eig
    m = lam.shape[-1]
    xi = divided_differences(lam)
    K = np.einsum("...cb,...ra->...crba", Q, Q).reshape(Q.shape[:-2] + (m * m, m * m))
    # column index of K is b*m + a, matching xi[b, a]
    Kxi = K * xi.reshape(xi.shape[:-2] + (1, m * m))
    return matcalc.symmetrize(Kxi @ np.swapaxes(K, -1, -2))


def _vec_index_tables(m):
    r, c = vecl_indices(m)
    lower = c * m + r     # vec is column-major: (row r, col c) -> c*m + r
    upper = r * m + c
    diag = np.arange(m) * (m + 1)
    return lower, upper, diag


def jacobian_from_eig(eig):
    """d vecl(R) / d gamma given the eigen-decomposition of G = log R."""
    m = eig.eigenvalues.shape[-1]
    P = m * (m - 1) // 2
    batch = eig.eigenvalues.shape[:-1]
    if m < 2:
        return np.zeros(batch + (0, 0))
    A = exp_frechet_matrix(eig)
    lower, upper, diag = _vec_index_tables(m)
    A_dd = A[..., diag[:, None], diag[None, :]]
    A_d = A[..., diag, :]
    B = A - np.swapaxes(A_d, -1, -2) @ np.linalg.solve(A_dd, A_d)
    B = matcalc.symmetrize(B)
    J = (B[..., lower[:, None], lower[None, :]]
         + B[..., lower[:, None], upper[None, :]])
    return J.reshape(batch + (P, P))


def gzt_jacobian(R):
    """d vecl(R) / d gamma at the correlation matrix R."""
    G = matcalc.matrix_log(matcalc.check_correlation(R))
    return jacobian_from_eig(matcalc.eigh(G))


def _check_perm(perm, m):
    perm = np.asarray(perm)
    if perm.shape != (m,) or not np.array_equal(np.sort(perm), np.arange(m)):
        raise BadPermutationError(f"{perm!r} is not a permutation of 0..{m - 1}")
    return perm.astype(int)


def permute(R, perm):
    """Relabel variables: out[i, j] = R[perm[i], perm[j]] (0-based perm)."""
    R = np.asarray(R, dtype=float)
    perm = _check_perm(perm, R.shape[-1])
    return R[..., perm[:, None], perm[None, :]]


def pair_permutation(perm):
    """Index array ``idx`` with vecl(P A P') == vecl(A)[idx]."""
    perm = np.asarray(perm)
    m = perm.shape[0]
    perm = _check_perm(perm, m)
    pos = np.full((m, m), -1)
    r, c = vecl_indices(m)
    pos[r, c] = np.arange(r.size)
    pos[c, r] = np.arange(r.size)
    return pos[perm[r], perm[c]]
