"""
Gaussian likelihood, score, expected information and the quasi-Fisher
scoring fitter.

The log-likelihood omits the -(m_i/2) log(2 pi) constant:

    l(omega) = -1/2 sum_i ( log|D_i R_i D_i| + nu_i' D_i^-1 R_i^-1 D_i^-1 nu_i )

Everything is evaluated per size batch (all groups with the same m_i at
once) and reduced over batches in ascending m, so results do not depend on
how groups are laid out in memory.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import gzt
from .errors import (MaxIterationsError, NoConvergenceError, NonFiniteError,
                     NotPositiveDefiniteError, SingularInformationError)
from .matcalc import vecl, vecl_indices
from .model import GroupedDataset, ParameterVector

log = logging.getLogger(__name__)

# E[log chi^2_1]; removes the downward bias of log squared residuals
_LOG_CHI2_1_MEAN = -1.2703628454614782


@dataclass
class FisherBlocks:
    """Blocks of the expected information; the beta/(alpha, lambda) blocks are zero."""
    I11: np.ndarray
    I22: np.ndarray
    I33: np.ndarray
    I23: np.ndarray

    @property
    def dims(self):
        return self.I11.shape[0], self.I22.shape[0], self.I33.shape[0]

    def covariance_block(self):
        """Information of (alpha, lambda)."""
        return np.block([[self.I22, self.I23], [self.I23.T, self.I33]])

    def full(self):
        p, d, q = self.dims
        out = np.zeros((p + d + q,) * 2)
        out[:p, :p] = self.I11
        out[p:, p:] = self.covariance_block()
        return out

    def inverse(self):
        """Inverse of the full information; raises SingularInformationError."""
        p = self.I11.shape[0]
        out = np.zeros((p + sum(self.dims[1:]),) * 2)
        out[:p, :p] = _spd_inverse(self.I11)
        out[p:, p:] = _spd_inverse(self.covariance_block())
        return out


# reciprocal condition number below which the information counts as singular
SINGULAR_RCOND = 1e-13


def _cholesky(M):
    """Cholesky factor of a symmetric information matrix, scaled to unit diagonal."""
    d = np.sqrt(np.abs(np.diag(M)))
    if np.any(d == 0) or not np.all(np.isfinite(M)):
        raise SingularInformationError(
            "information matrix is singular; check that the designs are identifiable")
    S = M / np.outer(d, d)
    try:
        c, low = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise SingularInformationError(
            "information matrix is singular; check that the designs are identifiable") from exc
    piv = np.abs(np.diag(c))
    if (piv.min() / piv.max()) ** 2 < SINGULAR_RCOND:
        raise SingularInformationError(
            "information matrix is numerically singular; check for collinear columns")
    return (c, low), d


def _spd_solve(M, v):
    if M.size == 0:
        return np.zeros(np.shape(v))
    c, d = _cholesky(M)
    v = np.asarray(v, dtype=float)
    scale = d if v.ndim == 1 else d[:, None]
    return linalg.cho_solve(c, v / scale) / scale


def _spd_inverse(M):
    if M.size == 0:
        return M.copy()
    return _spd_solve(M, np.eye(M.shape[0]))


def _sandwich(A, M, B):
    """sum_b A_b' M_b B_b over the leading batch axis."""
    return np.sum(np.swapaxes(A, -1, -2) @ (M @ B), axis=0)


def _mean_link_derivative(eta):
    # identity link; the score and I11 already carry this factor
    return np.ones_like(eta)


def j_matrix(Rinv):
    """J[(j,k),(l,s)] = a_jl a_ks + a_js a_kl over vecl pairs, a = R^-1.

    Equals E[eta eta'] for eta = vecl(R^-1 e e' R^-1 - R^-1), e ~ N(0, R).
    Accepts a single matrix or a stack.
    """
    a = np.asarray(Rinv)
    r, c = vecl_indices(a.shape[-1])
    return (a[..., r[:, None], r[None, :]] * a[..., c[:, None], c[None, :]]
            + a[..., r[:, None], c[None, :]] * a[..., c[:, None], r[None, :]])


def h_matrix(Rinv):
    """H[(j,k),l] = a_jl [l = k] + a_kl [l = j]; E[eta (h - 1)'] = H."""
    a = np.asarray(Rinv)
    m = a.shape[-1]
    r, c = vecl_indices(m)
    pairs = np.arange(r.size)
    H = np.zeros(a.shape[:-2] + (r.size, m))
    a_rc = a[..., r, c]
    H[..., pairs, r] += a_rc
    H[..., pairs, c] += a_rc
    return H


@dataclass
class _Evaluation:
    loglik: float
    per_group_loglik: np.ndarray
    score: np.ndarray | None = None          # flat (p + d + q)
    per_group_score: np.ndarray | None = None
    info: FisherBlocks | None = None


def _evaluate(params, data, *, score=False, info=False, beta_only=False,
              per_group=False, warm=None, method="newton"):
    """Shared pass over size batches.

    ``beta_only`` limits score/info to the beta block (no Jacobians needed).
    ``warm`` is an optional dict m -> diagonal of log R from a previous call,
    used to start the inverse transform; it is updated in place.  ``method``
    is passed to :func:`gzt.gzt_inverse`.
    """
    p, q, d = data.dims
    beta, alpha, lam = params.beta, params.alpha, params.lam
    ll_groups = np.zeros(data.n_groups)
    S1, S2, S3 = np.zeros(p), np.zeros(d), np.zeros(q)
    I11, I22, I33, I23 = np.zeros((p, p)), np.zeros((d, d)), np.zeros((q, q)), np.zeros((d, q))
    G = np.zeros((data.n_groups, p + d + q)) if per_group else None
    need_corr = (score or info) and not beta_only

    for b in data.batches:
        m = b.m
        eta_mean = np.einsum("bmp,p->bm", b.X, beta) + b.mean_offset
        log_var = np.einsum("bmq,q->bm", b.Z, lam) + b.var_offset
        sd = np.exp(0.5 * log_var)
        eps = (b.y - eta_mean) / sd
        if m == 1:
            R = np.ones((len(b.index), 1, 1))
            Rinv = R
            logdetR = np.zeros(len(b.index))
            eig = None
        else:
            gamma = np.einsum("bPd,d->bP", b.W, alpha) + b.corr_offset
            x0 = None if warm is None else warm.get(m)
            inv = gzt.gzt_inverse(gamma, m, x0=x0, method=method,
                                  full_output=True)
            if warm is not None:
                warm[m] = inv.log_diag
            R, eig = inv.R, inv.eig
            logdetR = inv.log_diag.sum(axis=-1)   # log|R| = tr(log R)
            lam_R, Q = eig
            Rinv = (Q * np.exp(-lam_R)[:, None, :]) @ np.swapaxes(Q, -1, -2)
            Rinv = 0.5 * (Rinv + np.swapaxes(Rinv, -1, -2))
        Re = np.einsum("bjk,bk->bj", Rinv, eps)
        quad = np.einsum("bj,bj->b", eps, Re)
        ll_groups[b.index] = -0.5 * (logdetR + log_var.sum(axis=-1) + quad)

        if not (score or info):
            continue
        delta = _mean_link_derivative(eta_mean)
        Xs = b.X * (delta / sd)[..., None]            # D^-1 Delta X
        if score:
            s1 = np.einsum("bmp,bm->bp", Xs, Re)
            S1 += s1.sum(axis=0)
            if per_group:
                G[b.index, :p] = s1
        if info:
            I11 += _sandwich(Xs, Rinv, Xs)
        if not need_corr:
            continue

        h = eps * Re
        if score:
            s3 = 0.5 * np.einsum("bmq,bm->bq", b.Z, h - 1.0)
            S3 += s3.sum(axis=0)
            if per_group:
                G[b.index, p + d:] = s3
        if info:
            I33 += 0.25 * _sandwich(b.Z, Rinv * R + np.eye(m), b.Z)
        if m == 1:
            continue

        jac = gzt.jacobian_from_eig(eig)               # (b, P, P)
        T = jac @ b.W                                  # d gamma-space -> rho-space
        r, c = vecl_indices(m)
        if score:
            eta = vecl(np.einsum("bj,bk->bjk", Re, Re) - Rinv)
            s2 = np.einsum("bPd,bP->bd", T, eta)
            S2 += s2.sum(axis=0)
            if per_group:
                G[b.index, p:p + d] = s2
        if info:
            J, H = j_matrix(Rinv), h_matrix(Rinv)
            I22 += _sandwich(T, J, T)
            I23 += 0.5 * _sandwich(T, H, b.Z)

    ll = float(np.sum(ll_groups))
    if not np.isfinite(ll):
        raise NonFiniteError("log-likelihood is not finite")
    out = _Evaluation(ll, ll_groups)
    if score:
        out.score = np.concatenate([S1, S2, S3])
        out.per_group_score = G
    if info:
        out.info = FisherBlocks(0.5 * (I11 + I11.T), 0.5 * (I22 + I22.T), 0.5 * (I33 + I33.T), I23)
    return out


def log_likelihood(params: ParameterVector, data: GroupedDataset) -> float:
    return _evaluate(params.check(data), data).loglik


def score(params: ParameterVector, data: GroupedDataset, per_group=False):
    """Analytic score (S1, S2, S3) stacked in omega order.

    With ``per_group=True`` returns the (n_groups, p + d + q) matrix of
    per-group contributions instead of their sum.
    """
    ev = _evaluate(params.check(data), data, score=True, per_group=per_group)
    return ev.per_group_score if per_group else ev.score


def fisher_information(params: ParameterVector, data: GroupedDataset) -> FisherBlocks:
    return _evaluate(params.check(data), data, info=True).info


# ---------------------------------------------------------------------------
# fitting

@dataclass
class FitOptions:
    max_iter: int = 100
    tol: float = 1e-7              # on ||omega_new - omega_old||_inf
    score_tol: float = 1e-6        # relative: ||score||_inf < score_tol * (1 + |l|)
    max_halvings: int = 10
    restarts: int = 0
    restart_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0 or self.score_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class FitResult:
    params: ParameterVector
    loglik: float
    information: FisherBlocks
    std_errors: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    mean_names: tuple = ()
    correlation_names: tuple = ()
    variance_names: tuple = ()
    n_groups: int = 0
    n_obs: int = 0
    fingerprint: str = ""
    score_norm: float = np.nan

    @property
    def n_params(self):
        return self.params.beta.size + self.params.alpha.size + self.params.lam.size

    @property
    def estimates(self):
        return self.params.flat()

    def covariance(self):
        return self.information.inverse()

    def coefficients(self):
        """Rows of (name, block, estimate, std_error) in omega order."""
        blocks = ([(n, "mean") for n in self.mean_names]
                  + [(n, "matlogcorr") for n in self.correlation_names]
                  + [(n, "logvariance") for n in self.variance_names])
        return [(n, blk, est, se) for (n, blk), est, se
                in zip(blocks, self.estimates, self.std_errors)]


def initial_params(data: GroupedDataset) -> ParameterVector:
    """Least-squares start: OLS for beta, log squared residuals for lambda, alpha = 0."""
    p, q, d = data.dims
    X = np.vstack([g.X for g in data.groups])
    Z = np.vstack([g.Z for g in data.groups])
    y = np.concatenate([g.y - g.mean_offset for g in data.groups])
    voff = np.concatenate([g.var_offset for g in data.groups])
    beta = np.linalg.lstsq(X, y, rcond=None)[0] if p else np.zeros(0)
    resid = y - X @ beta
    target = np.log(np.maximum(resid ** 2, 1e-8)) - _LOG_CHI2_1_MEAN - voff
    lam = np.linalg.lstsq(Z, target, rcond=None)[0] if q else np.zeros(0)
    return ParameterVector(beta, np.zeros(d), lam)


def _try_loglik(omega, dims, data, warm=None, beta_only=True):
    try:
        # a rejected trial point may overflow; that is reported as failure
        with np.errstate(over="ignore", invalid="ignore"):
            return _evaluate(ParameterVector.from_flat(omega, dims), data,
                             score=True, info=True, beta_only=beta_only, warm=warm,
                             method="newton")
    except (MaxIterationsError, NonFiniteError, NotPositiveDefiniteError,
            np.linalg.LinAlgError, FloatingPointError):
        return None


def _line_search(omega, direction, ll_old, dims, data, max_halvings,
                 warm=None, beta_only=True):
    """Largest step 2^-k (k <= max_halvings) that does not lower the likelihood."""
    step = 1.0
    for _ in range(max_halvings + 1):
        cand = omega + step * direction
        ev = _try_loglik(cand, dims, data, warm, beta_only)
        if ev is not None and ev.loglik >= ll_old - 1e-10 * (1 + abs(ll_old)):
            return cand, ev
        step *= 0.5
    return omega, None


def _fit_once(data, init, options):
    p, q, d = data.dims
    dims = (p, d, q)
    omega = init.check(data).flat()
    warm = {}
    ev = _try_loglik(omega, dims, data, warm, beta_only=False)
    if ev is None:
        raise NoConvergenceError("log-likelihood cannot be evaluated at the initial value")
    trace = [{"iteration": 0, "loglik": ev.loglik, "step": np.nan}]
    converged = False
    it = 0
    # every accepted evaluation is a full one, so each step reuses the last
    for it in range(1, options.max_iter + 1):
        old = omega.copy()
        # beta step given (alpha, lambda)
        dbeta = _spd_solve(ev.info.I11, ev.score[:p])
        direction = np.concatenate([dbeta, np.zeros(d + q)])
        omega, new = _line_search(omega, direction, ev.loglik, dims, data,
                                  options.max_halvings, warm, beta_only=False)
        ev = new or ev
        # joint (alpha, lambda) step at the updated beta
        if d + q:
            dcov = _spd_solve(ev.info.covariance_block(), ev.score[p:])
            direction = np.concatenate([np.zeros(p), dcov])
            omega, new = _line_search(omega, direction, ev.loglik, dims, data,
                                      options.max_halvings, warm, beta_only=False)
            ev = new or ev
        delta = float(np.max(np.abs(omega - old))) if omega.size else 0.0
        trace.append({"iteration": it, "loglik": ev.loglik, "step": delta})
        log.debug("iteration %d: loglik %.10g, step %.3e", it, ev.loglik, delta)
        if delta < options.tol:
            converged = True
            break

    params = ParameterVector.from_flat(omega, dims)
    final = _evaluate(params, data, score=True, info=True)
    score_norm = float(np.max(np.abs(final.score))) if final.score.size else 0.0
    if not converged and score_norm < options.score_tol * (1 + abs(final.loglik)):
        converged = True
    try:
        se = np.sqrt(np.diag(final.info.inverse()))
    except SingularInformationError:
        if converged:
            raise
        se = np.full(omega.size, np.nan)
    return FitResult(
        params=params, loglik=final.loglik, information=final.info,
        std_errors=se, iterations=it, converged=converged, trace=trace,
        mean_names=data.mean_names, correlation_names=data.correlation_names,
        variance_names=data.variance_names, n_groups=data.n_groups,
        n_obs=data.n_obs, fingerprint=data.fingerprint(), score_norm=score_norm)


def fit(data: GroupedDataset, init: ParameterVector | None = None,
        options: FitOptions | None = None) -> FitResult:
    """Maximum likelihood by alternating beta and (alpha, lambda) scoring steps.

    With ``options.restarts = k`` the fit is repeated from k perturbed copies
    of the starting value and the highest likelihood is returned.
    """
    options = options or FitOptions()
    init = init if init is not None else initial_params(data)
    best = _fit_once(data, init, options)
    if options.restarts:
        rng = np.random.default_rng(options.seed)
        base = init.flat()
        dims = init.dims
        for _ in range(options.restarts):
            scale = options.restart_scale * np.maximum(1.0, np.abs(base))
            start = ParameterVector.from_flat(base + scale * rng.standard_normal(base.size), dims)
            try:
                cand = _fit_once(data, start, options)
            except (NoConvergenceError, SingularInformationError):
                continue
            if cand.converged and (not best.converged or cand.loglik > best.loglik):
                best = cand
    if not best.converged:
        log.warning("fit did not converge in %d iterations", options.max_iter)
    return best
