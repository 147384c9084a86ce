"""
Grouped data and the three linked regressions.

A group i has responses y_i (length m_i) with

    mean           mu_i        = X_i beta           (+ offset)
    log-variance   log sigma_i^2 = Z_i lambda       (+ offset)
    correlation    gamma_i     = W_i alpha          (+ offset),  R_i = gzt_inverse(gamma_i)

W_i has one row per within-group pair in vecl order, i.e. pairs (j, k) with
j > k sorted by k then j, where j, k index the group's records in input order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import gzt
from .errors import (ConfigError, EmptyGroupError, InconsistentTypesError,
                     MissingCovariateError)
from .matcalc import n_pairs, vecl_indices

INTERCEPT = "intercept"


@dataclass(frozen=True)
class ObservationRecord:
    group_id: str
    response: float
    covariates: Mapping[str, float | str] = field(default_factory=dict)
    subgroup_ids: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.response):
            raise ValueError(f"non-finite response in group {self.group_id!r}")

    def lookup(self, name):
        if name in self.subgroup_ids:
            return self.subgroup_ids[name]
        if name in self.covariates:
            return self.covariates[name]
        raise MissingCovariateError(
            f"record in group {self.group_id!r} has no covariate {name!r}")


# ---------------------------------------------------------------------------
# pair covariate rules

_RULE_ALIASES = {
    "intercept": "intercept",
    "same_subgroup": "same_subgroup", "same": "same_subgroup",
    "abs_difference": "abs_difference", "absdiff": "abs_difference",
    "difference": "difference", "diff": "difference",
    "sq_difference": "sq_difference", "sqdiff": "sq_difference",
    "signed_product": "signed_product", "product": "signed_product",
    "lag": "lag",
}


@dataclass(frozen=True)
class PairCovariateRule:
    """How one column of W is built from a pair of records (j, k), j > k.

    kinds
        intercept           1
        same_subgroup(v)    1 if records share the value of v, else 0
        abs_difference(v)   |v_j - v_k|
        difference(v)       v_j - v_k (depends on record order)
        sq_difference(v)    (v_j - v_k)^2
        signed_product(v)   v_j * v_k
        lag(v)              |rank_j - rank_k| of v within the group
    """
    kind: str
    covariate: str | None = None
    name: str | None = None

    def __post_init__(self):
        kind = _RULE_ALIASES.get(self.kind)
        if kind is None:
            raise ConfigError(f"unknown pair rule kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind != "intercept" and not self.covariate:
            raise ConfigError(f"pair rule {kind!r} needs a covariate")
        if self.name is None:
            label = INTERCEPT if kind == "intercept" else f"{kind}:{self.covariate}"
            object.__setattr__(self, "name", label)

    @classmethod
    def parse(cls, spec: str) -> "PairCovariateRule":
        """Parse ``kind`` or ``kind:covariate`` (e.g. ``absdiff:mathkind``)."""
        kind, _, cov = spec.strip().partition(":")
        return cls(kind.strip(), cov.strip() or None)

    def column(self, records: Sequence[ObservationRecord]) -> np.ndarray:
        r, c = vecl_indices(len(records))
        if self.kind == "intercept":
            return np.ones(r.size)
        vals = [rec.lookup(self.covariate) for rec in records]
        if self.kind == "same_subgroup":
            keys = np.array([str(v) for v in vals], dtype=object)
            return (keys[r] == keys[c]).astype(float)
        if any(isinstance(v, str) for v in vals):
            raise InconsistentTypesError(
                f"pair rule {self.kind!r} needs numeric {self.covariate!r}")
        v = np.asarray(vals, dtype=float)
        if self.kind == "abs_difference":
            return np.abs(v[r] - v[c])
        if self.kind == "difference":
            return v[r] - v[c]
        if self.kind == "sq_difference":
            return (v[r] - v[c]) ** 2
        if self.kind == "signed_product":
            return v[r] * v[c]
        rank = np.unique(v, return_inverse=True)[1].astype(float)
        return np.abs(rank[r] - rank[c])


# ---------------------------------------------------------------------------
# containers

@dataclass
class GroupData:
    """Designs for one group; offsets are added to the linear predictors."""
    group_id: str
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    mean_offset: np.ndarray | None = None
    var_offset: np.ndarray | None = None
    corr_offset: np.ndarray | None = None
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        m = self.y.size
        if m == 0:
            raise EmptyGroupError(f"group {self.group_id!r} has no observations")
        self.X = np.asarray(self.X, dtype=float).reshape(m, -1)
        self.Z = np.asarray(self.Z, dtype=float).reshape(m, -1)
        P = n_pairs(m)
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != P:
            raise ValueError(f"group {self.group_id!r}: W must have shape ({P}, d), "
                             f"got {self.W.shape}")
        self.mean_offset = _offset(self.mean_offset, m)
        self.var_offset = _offset(self.var_offset, m)
        self.corr_offset = _offset(self.corr_offset, P)

    @property
    def size(self):
        return self.y.size


def _offset(v, n):
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != n:
        raise ValueError(f"offset has length {v.size}, expected {n}")
    return v


class SizeBatch(NamedTuple):
    """Groups of a common size m stacked along a leading axis."""
    m: int
    index: np.ndarray        # positions in GroupedDataset.groups
    y: np.ndarray            # (b, m)
    X: np.ndarray            # (b, m, p)
    Z: np.ndarray            # (b, m, q)
    W: np.ndarray            # (b, P, d)
    mean_offset: np.ndarray  # (b, m)
    var_offset: np.ndarray   # (b, m)
    corr_offset: np.ndarray  # (b, P)


class GroupedDataset:
    """Immutable collection of groups sharing column names for X, Z and W."""

    def __init__(self, groups: Sequence[GroupData], mean_names, variance_names,
                 correlation_names):
        if not groups:
            raise EmptyGroupError("dataset has no groups")
        self.groups = tuple(groups)
        self.mean_names = tuple(mean_names)
        self.variance_names = tuple(variance_names)
        self.correlation_names = tuple(correlation_names)
        p, q, d = self.dims
        for g in self.groups:
            if g.X.shape[1] != p or g.Z.shape[1] != q or g.W.shape[1] != d:
                raise ValueError(
                    f"group {g.group_id!r}: design widths {g.X.shape[1]}, "
                    f"{g.Z.shape[1]}, {g.W.shape[1]} do not match ({p}, {q}, {d})")
        self._batches = None

    @property
    def dims(self):
        return len(self.mean_names), len(self.variance_names), len(self.correlation_names)

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def n_obs(self):
        return sum(g.size for g in self.groups)

    @property
    def n_params(self):
        return sum(self.dims)

    @property
    def sizes(self):
        return np.array([g.size for g in self.groups])

    def fingerprint(self) -> str:
        """Hash of group ids and responses; identifies the data an LRT compares."""
        h = hashlib.sha256()
        for g in self.groups:
            h.update(str(g.group_id).encode())
            h.update(np.ascontiguousarray(g.y).tobytes())
        return h.hexdigest()[:16]

    @property
    def batches(self) -> tuple[SizeBatch, ...]:
        if self._batches is None:
            sizes = self.sizes
            out = []
            for m in np.unique(sizes):
                idx = np.flatnonzero(sizes == m)
                gs = [self.groups[i] for i in idx]
                out.append(SizeBatch(
                    int(m), idx,
                    np.stack([g.y for g in gs]),
                    np.stack([g.X for g in gs]),
                    np.stack([g.Z for g in gs]),
                    np.stack([g.W for g in gs]),
                    np.stack([g.mean_offset for g in gs]),
                    np.stack([g.var_offset for g in gs]),
                    np.stack([g.corr_offset for g in gs]),
                ))
            self._batches = tuple(out)
        return self._batches

    def restrict(self, mean=None, variance=None, correlation=None, fixed=None):
        """Nested sub-model keeping only the named columns.

        ``fixed`` maps dropped column names to values; their contribution is
        moved into the offsets, so e.g. ``restrict(correlation=[],
        fixed={'intercept': 0.2})`` fixes a correlation intercept at 0.2.
        Dropped columns without a fixed value are set to zero.
        """
        fixed = dict(fixed or {})
        keep = []
        for names, wanted in ((self.mean_names, mean), (self.variance_names, variance),
                              (self.correlation_names, correlation)):
            wanted = names if wanted is None else tuple(wanted)
            missing = set(wanted) - set(names)
            if missing:
                raise MissingCovariateError(f"unknown columns {sorted(missing)}")
            cols = [names.index(w) for w in wanted]
            vals = np.array([fixed.get(n, 0.0) if n not in wanted else 0.0 for n in names])
            keep.append((tuple(wanted), cols, vals))
        (mn, mc, mv), (vn, vc, vv), (cn, cc, cv) = keep
        groups = [
            GroupData(g.group_id, g.y, g.X[:, mc], g.Z[:, vc], g.W[:, cc],
                      g.mean_offset + g.X @ mv, g.var_offset + g.Z @ vv,
                      g.corr_offset + g.W @ cv, g.covariates)
            for g in self.groups
        ]
        return GroupedDataset(groups, mn, vn, cn)


@dataclass
class ParameterVector:
    """omega = (beta', alpha', lambda')'."""
    beta: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if not all(np.all(np.isfinite(v)) for v in (self.beta, self.alpha, self.lam)):
            raise ValueError("parameter vector has non-finite entries")

    @property
    def dims(self):
        return self.beta.size, self.alpha.size, self.lam.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta, self.alpha, self.lam])

    @classmethod
    def from_flat(cls, omega, dims):
        p, d, q = dims
        omega = np.asarray(omega, dtype=float)
        return cls(omega[:p], omega[p:p + d], omega[p + d:p + d + q])

    @classmethod
    def zeros(cls, data: GroupedDataset):
        p, q, d = data.dims
        return cls(np.zeros(p), np.zeros(d), np.zeros(q))

    def check(self, data: GroupedDataset):
        p, q, d = data.dims
        if self.dims != (p, d, q):
            raise ValueError(f"parameter dims {self.dims} do not match data (p, d, q) = {(p, d, q)}")
        return self


# ---------------------------------------------------------------------------
# construction from long-format records

def _column_kinds(records, names):
    kinds = {}
    for name in names:
        seen = set()
        for rec in records:
            v = rec.lookup(name)
            seen.add("categorical" if isinstance(v, str) else "numeric")
        if len(seen) > 1:
            raise InconsistentTypesError(
                f"covariate {name!r} is categorical in some records and numeric in others")
        kinds[name] = seen.pop()
    return kinds


def _expand(records, formula):
    """Design columns for a mean/variance formula (list of covariate names).

    Categorical covariates become dummies, dropping the first level in
    lexical order.
    """
    formula = list(formula)
    cov_names = [f for f in formula if f != INTERCEPT]
    kinds = _column_kinds(records, cov_names)
    names, builders = [], []
    for f in formula:
        if f == INTERCEPT:
            names.append(INTERCEPT)
            builders.append(lambda rec: 1.0)
        elif kinds[f] == "numeric":
            names.append(f)
            builders.append(lambda rec, f=f: float(rec.lookup(f)))
        else:
            levels = sorted({str(rec.lookup(f)) for rec in records})
            for lev in levels[1:]:
                names.append(f"{f}[{lev}]")
                builders.append(lambda rec, f=f, lev=lev: float(str(rec.lookup(f)) == lev))
    return names, builders


def build_dataset(records: Sequence[ObservationRecord], mean_formula=(INTERCEPT,),
                  variance_formula=(INTERCEPT,), pair_rules=(INTERCEPT,)) -> GroupedDataset:
    """Group long-format records and build X_i, Z_i and W_i.

    Groups appear in order of first occurrence; within a group the record
    order is kept and defines the vecl pair ordering of W_i.
    """
    if not records:
        raise EmptyGroupError("no records")
    rules = [r if isinstance(r, PairCovariateRule) else PairCovariateRule.parse(r)
             for r in pair_rules]
    mean_names, mean_cols = _expand(records, mean_formula)
    var_names, var_cols = _expand(records, variance_formula)
    for rule in rules:
        if rule.covariate is not None:
            for rec in records:
                rec.lookup(rule.covariate)
    by_group: dict[str, list[ObservationRecord]] = {}
    for rec in records:
        by_group.setdefault(rec.group_id, []).append(rec)

    groups = []
    for gid, recs in by_group.items():
        X = np.array([[f(r) for f in mean_cols] for r in recs]).reshape(len(recs), -1)
        Z = np.array([[f(r) for f in var_cols] for r in recs]).reshape(len(recs), -1)
        W = np.zeros((n_pairs(len(recs)), len(rules)))
        for col, rule in enumerate(rules):
            W[:, col] = rule.column(recs)
        numeric = {}
        for name in recs[0].covariates:
            vals = [r.covariates.get(name) for r in recs]
            if all(isinstance(v, (int, float)) for v in vals):
                numeric[name] = np.array(vals, dtype=float)
        groups.append(GroupData(gid, [r.response for r in recs], X, Z, W,
                                covariates=numeric))
    return GroupedDataset(groups, mean_names, var_names, [r.name for r in rules])


# ---------------------------------------------------------------------------

class GroupStructure(NamedTuple):
    mu: np.ndarray   # mean vector
    sd: np.ndarray   # D_i = diag(sd)
    R: np.ndarray    # correlation matrix


def predict_structures(params: ParameterVector, data: GroupedDataset) -> list[GroupStructure]:
    """Per-group (mu_i, D_i, R_i) implied by ``params``."""
    params.check(data)
    out = []
    for g in data.groups:
        mu = g.X @ params.beta + g.mean_offset
        sd = np.exp(0.5 * (g.Z @ params.lam + g.var_offset))
        if g.size == 1:
            R = np.ones((1, 1))
        else:
            R = gzt.gzt_inverse(g.W @ params.alpha + g.corr_offset, method="newton")
        out.append(GroupStructure(mu, sd, R))
    return out
