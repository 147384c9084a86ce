"""
Data generators for the simulation designs and standard correlation families.

Randomness: every draw comes from ``numpy.random.Generator`` with the PCG64
bit generator.  A design's ``seed`` seeds ``SeedSequence(seed)`` directly;
replication ``r`` of a battery uses ``SeedSequence([seed, r])``.  Given the
numpy version, output is bit-reproducible and independent of thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from . import gzt
from .errors import BadDesignError, GZTError
from .matcalc import check_correlation, vecl_indices
from .model import GroupData, GroupedDataset, ParameterVector

STUDY1_BETA = (1.0, -0.5, 0.5)
STUDY1_ALPHA = (0.3, -0.2, 0.3)
STUDY1_LAMBDA = (-0.5, 0.5, -0.3)
STUDY2_BETA = (1.0, -0.5, 0.5)
STUDY2_CASE2_ALPHA = (0.2, 0.3, -0.2)
STUDY2_CASE2_LAMBDA = 1.0

_KINDS = ("study1", "study2", "study3", "family", "block")


@dataclass(frozen=True)
class SimDesign:
    """A data-generating design.

    kind
        ``study1``  unbalanced longitudinal design, sizes 1 + Binomial(6, 0.8)
        ``study2``  clustered classroom-style design, ``case`` in I..IV
        ``study3``  two balanced classes of five per group, random-effect
                    variances ``variances = (school, class)``, unit error
        ``family``  n groups of size ``m`` with an exchangeable / ar1 /
                    banded correlation ``rho``
        ``block``   nested random effects with block ``sizes`` and
                    ``variances = (group, subgroup, error)``
    """
    kind: str
    n: int = 200
    seed: int = 0
    error: str = "gaussian"        # or "t"
    df: float = 5.0
    t_scale: str = "covariance"    # t errors: D R D is the covariance, or "scale" matrix
    case: str = "I"
    family: str = "exchangeable"
    rho: float = 0.5
    m: int = 3
    sizes: tuple = (5, 5)
    variances: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise BadDesignError(f"unknown design kind {self.kind!r}")
        if self.n < 1:
            raise BadDesignError("n must be positive")
        if self.error not in ("gaussian", "t"):
            raise BadDesignError(f"unknown error distribution {self.error!r}")
        if self.t_scale not in ("scale", "covariance"):
            raise BadDesignError(f"t_scale must be 'scale' or 'covariance', got {self.t_scale!r}")
        if self.error == "t" and self.df <= 2:
            raise BadDesignError("t errors need df > 2 for a finite covariance")
        if self.kind == "study2" and self.case not in ("I", "II", "III", "IV"):
            raise BadDesignError(f"study2 case must be I..IV, got {self.case!r}")
        if self.kind == "family" and self.family not in ("exchangeable", "ar1", "banded"):
            raise BadDesignError(f"unknown correlation family {self.family!r}")

    def with_seed(self, seed):
        return replace(self, seed=seed)


class Simulation(NamedTuple):
    dataset: GroupedDataset
    truth: ParameterVector | None   # None when the model is misspecified
    covariances: list               # true Sigma_i per group


# ---------------------------------------------------------------------------
# correlation structures and samplers

def family_correlation(kind, rho, m):
    """Exchangeable, AR(1) or banded (bandwidth 1) correlation matrix."""
    idx = np.arange(m)
    lag = np.abs(idx[:, None] - idx[None, :])
    if kind == "exchangeable":
        R = np.where(lag == 0, 1.0, rho)
    elif kind == "ar1":
        R = float(rho) ** lag
    elif kind == "banded":
        R = np.where(lag == 0, 1.0, np.where(lag == 1, rho, 0.0))
    else:
        raise BadDesignError(f"unknown correlation family {kind!r}")
    return R.astype(float)


def random_correlation(m, rng, df=None):
    """Random correlation matrix from a normalized Wishart(df, I) draw."""
    df = m + 2 if df is None else df
    A = rng.standard_normal((df, m))
    S = A.T @ A
    d = 1.0 / np.sqrt(np.diag(S))
    R = S * d[:, None] * d[None, :]
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def gaussian_correlated(R, sd, count, rng):
    """``count`` draws from N(0, D R D) as rows; D = diag(sd)."""
    R = check_correlation(R)
    L = linalg.cholesky(R, lower=True)
    z = rng.standard_normal((count, R.shape[0]))
    return (z @ L.T) * np.asarray(sd, dtype=float)


def t_correlated(R, sd, count, rng, df, match_covariance=True):
    """Multivariate t draws with covariance D R D.

    With ``match_covariance=False`` D R D is the scale matrix instead and the
    covariance is df / (df - 2) D R D.
    """
    x = gaussian_correlated(R, sd, count, rng)
    w = rng.chisquare(df, size=(count, 1)) / df
    x = x / np.sqrt(w)
    return x * np.sqrt((df - 2.0) / df) if match_covariance else x


def _errors(cov, rng, design):
    sd = np.sqrt(np.diag(cov))
    R = cov / np.outer(sd, sd)
    np.fill_diagonal(R, 1.0)
    if design.error == "t":
        return t_correlated(R, sd, 1, rng, design.df,
                            match_covariance=design.t_scale != "scale")[0]
    return gaussian_correlated(R, sd, 1, rng)[0]


def _bvn_covariates(m, rng):
    return gaussian_correlated(np.array([[1.0, 0.5], [0.5, 1.0]]), [1.0, 1.0], m, rng)


# ---------------------------------------------------------------------------
# designs

def _study1(design, rng):
    beta, alpha, lam = (np.array(v) for v in (STUDY1_BETA, STUDY1_ALPHA, STUDY1_LAMBDA))
    groups, covs = [], []
    for i in range(design.n):
        m = 1 + rng.binomial(6, 0.8)
        x = _bvn_covariates(m, rng)
        u = rng.uniform(0.0, 1.0, m)
        X = np.column_stack([np.ones(m), x])
        Z = X
        r, c = vecl_indices(m)
        du = u[r] - u[c]
        W = np.column_stack([np.ones(r.size), du, du ** 2])
        sd = np.exp(0.5 * Z @ lam)
        R = gzt.gzt_inverse(W @ alpha, m)
        cov = R * np.outer(sd, sd)
        y = X @ beta + _errors(cov, rng, design)
        groups.append(GroupData(f"g{i + 1}", y, X, Z, W,
                                covariates={"x1": x[:, 0], "x2": x[:, 1], "u": u}))
        covs.append(cov)
    ds = GroupedDataset(groups, ("intercept", "x1", "x2"), ("intercept", "x1", "x2"),
                        ("intercept", "diff:u", "sqdiff:u"))
    return Simulation(ds, ParameterVector(beta, alpha, lam), covs)


def _nested_sizes(design, rng):
    if design.kind == "study2" and design.case != "I":
        n_classes = rng.integers(2, 5)
        return [1 + rng.binomial(4, 0.8) for _ in range(n_classes)]
    if design.kind == "study2":
        return [5, 5]   # case I is balanced
    return list(design.sizes)


def _block_covariance(sizes, var_group, var_sub, var_err):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    same = labels[:, None] == labels[None, :]
    return var_group + var_sub * same + var_err * np.eye(labels.size)


def _block_truth(sizes, var_group, var_sub, var_err):
    """alpha = (between, within - between) when the block structure is exactly representable."""
    if len(set(sizes)) != 1 or len(sizes) < 2 or sizes[0] < 2:
        return None
    cov = _block_covariance(sizes, var_group, var_sub, var_err)
    total = cov[0, 0]
    g = gzt.gzt_forward(cov / total)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    r, c = vecl_indices(labels.size)
    same = labels[r] == labels[c]
    within, between = g[same].mean(), g[~same].mean()
    return np.array([between, within - between]), np.log(total)


def _clustered(design, rng):
    """Study 2 cases, Study 3 and generic block designs (school / class / student)."""
    beta = np.array(STUDY2_BETA)
    case = design.case if design.kind == "study2" else "I"
    if design.kind == "study2":
        var_u, var_v, var_e = 1.0, 1.0, 1.0
    elif design.kind == "study3":
        var_u, var_v = design.variances[:2]
        var_e = 1.0
    else:
        var_u, var_v, var_e = design.variances
    with_time = case == "II"
    groups, covs, all_sizes = [], [], []
    for i in range(design.n):
        sizes = _nested_sizes(design, rng)
        all_sizes.append(tuple(sizes))
        m = int(sum(sizes))
        labels = np.repeat(np.arange(len(sizes)), sizes)
        x = _bvn_covariates(m, rng)
        X = np.column_stack([np.ones(m), x])
        r, c = vecl_indices(m)
        same = (labels[r] == labels[c]).astype(float)
        t = rng.uniform(0.0, 1.0, m) if with_time else None
        if case == "II":
            alpha = np.array(STUDY2_CASE2_ALPHA)
            W = np.column_stack([np.ones(r.size), same, np.abs(t[r] - t[c])])
            R = gzt.gzt_inverse(W @ alpha, m)
            cov = R * np.exp(STUDY2_CASE2_LAMBDA)
            e = _errors(cov, rng, design)
        else:
            W = np.column_stack([np.ones(r.size), same])
            e, cov = _random_effects_errors(sizes, labels, case, (var_u, var_v, var_e),
                                            rng, design)
        y = X @ beta + e
        cov_dict = {"x1": x[:, 0], "x2": x[:, 1], "class": labels.astype(float)}
        if t is not None:
            cov_dict["t"] = t
        groups.append(GroupData(f"s{i + 1}", y, X, np.ones((m, 1)), W, covariates=cov_dict))
        covs.append(cov)
    names = ["intercept", "same_subgroup:class"] + (["abs_difference:t"] if with_time else [])
    ds = GroupedDataset(groups, ("intercept", "x1", "x2"), ("intercept",), names)
    truth = None
    if case == "II":
        truth = ParameterVector(beta, STUDY2_CASE2_ALPHA, [STUDY2_CASE2_LAMBDA])
    elif case == "I" and len(set(all_sizes)) == 1:
        bt = _block_truth(list(all_sizes[0]), var_u, var_v, var_e)
        if bt is not None:
            truth = ParameterVector(beta, bt[0], [bt[1]])
    return Simulation(ds, truth, covs)


def _random_effects_errors(sizes, labels, case, variances, rng, design):
    var_u, var_v, var_e = variances
    m = labels.size
    u = np.sqrt(var_u) * _scalar_noise(rng, design)
    v = np.sqrt(var_v) * np.array([_scalar_noise(rng, design) for _ in sizes])
    cov = var_u + var_v * (labels[:, None] == labels[None, :])
    if case == "I":
        e = np.sqrt(var_e) * np.array([_scalar_noise(rng, design) for _ in range(m)])
        cov = cov + var_e * np.eye(m)
    elif case == "III":
        e = np.empty(m)
        inner = np.zeros((m, m))
        for k in range(len(sizes)):
            idx = np.flatnonzero(labels == k)
            R = 0.85 * family_correlation("ar1", 0.6, idx.size)
            np.fill_diagonal(R, 1.0)
            inner[np.ix_(idx, idx)] = R
            e[idx] = _errors(R, rng, design)
        cov = cov + inner
    else:  # IV: ARCH(1) within each class, sigma_1^2 = 1
        e = np.empty(m)
        var_path = np.empty(m)
        for k in range(len(sizes)):
            idx = np.flatnonzero(labels == k)
            s2, v2 = 1.0, 1.0
            for j in idx:
                e[j] = np.sqrt(s2) * _scalar_noise(rng, design)
                var_path[j] = v2
                s2 = 1.0 + 0.5 * e[j] ** 2
                v2 = 1.0 + 0.5 * v2
        cov = cov + np.diag(var_path)
    return u + v[labels] + e, cov


def _scalar_noise(rng, design):
    z = rng.standard_normal()
    if design.error == "t":
        z = z / np.sqrt(rng.chisquare(design.df) / design.df)
        if design.t_scale != "scale":
            z *= np.sqrt((design.df - 2) / design.df)
    return z


def _family(design, rng):
    m = design.m
    R = check_correlation(family_correlation(design.family, design.rho, m))
    r, c = vecl_indices(m)
    W = np.column_stack([np.ones(r.size), np.abs(r - c).astype(float)])
    groups, covs = [], []
    for i in range(design.n):
        y = _errors(R, rng, design)
        groups.append(GroupData(f"g{i + 1}", y, np.ones((m, 1)), np.ones((m, 1)), W,
                                covariates={"time": np.arange(m, dtype=float)}))
        covs.append(R)
    ds = GroupedDataset(groups, ("intercept",), ("intercept",), ("intercept", "lag:time"))
    return Simulation(ds, None, covs)


def generate(design: SimDesign) -> Simulation:
    """Draw one dataset; returns (dataset, truth, true covariances)."""
    rng = np.random.default_rng(np.random.SeedSequence(design.seed))
    if design.kind == "study1":
        return _study1(design, rng)
    if design.kind == "family":
        return _family(design, rng)
    return _clustered(design, rng)


def model_config(design: SimDesign) -> dict:
    """Model specification matching the columns of ``generate(design)``."""
    if design.kind == "study1":
        return {"response": "y", "mean": ["intercept", "x1", "x2"],
                "variance": ["intercept", "x1", "x2"],
                "correlation": ["intercept", "diff:u", "sqdiff:u"]}
    if design.kind == "family":
        return {"response": "y", "mean": ["intercept"], "variance": ["intercept"],
                "correlation": ["intercept", "lag:time"]}
    corr = ["intercept", "same_subgroup:class"]
    if design.kind == "study2" and design.case == "II":
        corr.append("abs_difference:t")
    return {"response": "y", "mean": ["intercept", "x1", "x2"], "variance": ["intercept"],
            "correlation": corr, "subgroups": ["class"]}


# ---------------------------------------------------------------------------
# replication batteries

def replication_seed(seed, rep):
    return np.random.SeedSequence([seed, rep])


def run_replications(design: SimDesign, n_reps: int, fn: Callable, threads: int = 1):
    """Apply ``fn(simulation, rep)`` to ``n_reps`` independent draws.

    Replication ``r`` uses entropy ``[design.seed, r]``; results come back in
    replication order whatever the thread count.
    """
    def one(rep):
        ss = replication_seed(design.seed, rep)
        seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        return fn(generate(design.with_seed(seed)), rep)

    if threads <= 1:
        return [one(r) for r in range(n_reps)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_reps)))


@dataclass
class LrtBattery:
    statistics: np.ndarray
    df: int
    failures: int = 0

    @property
    def failure_rate(self):
        total = self.statistics.size + self.failures
        return self.failures / total if total else 0.0


def study3_lrt_battery(n_reps: int, design: SimDesign | None = None, threads: int = 1,
                       fit_options=None) -> LrtBattery:
    """LRT statistics for H0: alpha fixed at its true value (df = number of alpha terms).

    The alternative frees the correlation intercept and the same-class
    coefficient; mean and log-variance are estimated under both.
    """
    from .inference import lrt
    from .likelihood import fit

    design = design or SimDesign("study3", n=50)
    if design.kind != "study3":
        raise BadDesignError("study3_lrt_battery needs a study3 design")

    def one(sim, rep):
        if sim.truth is None:
            raise BadDesignError("study3 design has no representable truth")
        data = sim.dataset
        fixed = dict(zip(data.correlation_names, sim.truth.alpha))
        null_data = data.restrict(correlation=[], fixed=fixed)
        try:
            full = fit(data, options=fit_options)
            null = fit(null_data, options=fit_options)
            if not (full.converged and null.converged):
                return None
            return lrt(full, null).statistic
        except (GZTError, ArithmeticError, np.linalg.LinAlgError):
            return None  # counted as a failure, not fatal

    results = run_replications(design, n_reps, one, threads)
    stats = np.array([s for s in results if s is not None])
    return LrtBattery(stats, df=2, failures=sum(s is None for s in results))


def study1_metrics(fit_result, sim: Simulation):
    """Absolute errors per coefficient plus the mean and covariance prediction errors."""
    from .model import predict_structures

    truth = sim.truth
    est = fit_result.params
    abs_err = np.abs(est.flat() - truth.flat())
    data = sim.dataset
    mu_err = np.mean([np.linalg.norm(g.X @ (est.beta - truth.beta)) for g in data.groups])
    fitted = predict_structures(est, data)
    sig_err = np.mean([np.linalg.norm(s.R * np.outer(s.sd, s.sd) - cov)
                       for s, cov in zip(fitted, sim.covariances)])
    return abs_err, mu_err, sig_err


@dataclass
class RecoveryBattery:
    abs_errors: np.ndarray     # (reps, p + d + q), omega order
    mu_errors: np.ndarray
    sigma_errors: np.ndarray
    z_scores: np.ndarray       # (estimate - truth) / std_error
    failures: int = 0

    def coverage(self, level=0.95):
        """Fraction of Wald intervals covering the truth, per coefficient."""
        from scipy.stats import norm
        return np.mean(np.abs(self.z_scores) <= norm.ppf(0.5 + level / 2), axis=0)

    def mad(self):
        """Mean absolute deviation of each coefficient from its true value."""
        return self.abs_errors.mean(axis=0)


def study1_battery(n_reps: int, design: SimDesign | None = None, threads: int = 1,
                   fit_options=None) -> RecoveryBattery:
    """Fit the correctly specified model to ``n_reps`` Study 1 draws."""
    from .likelihood import fit

    design = design or SimDesign("study1", n=200)
    if design.kind != "study1":
        raise BadDesignError("study1_battery needs a study1 design")

    def one(sim, rep):
        try:
            res = fit(sim.dataset, options=fit_options)
        except (GZTError, ArithmeticError, np.linalg.LinAlgError):
            return None
        if not res.converged:
            return None
        z = (res.estimates - sim.truth.flat()) / res.std_errors
        return (*study1_metrics(res, sim), z)

    results = run_replications(design, n_reps, one, threads)
    ok = [r for r in results if r is not None]
    cols = [np.array([r[k] for r in ok]) for k in range(4)]
    return RecoveryBattery(*cols, failures=len(results) - len(ok))
