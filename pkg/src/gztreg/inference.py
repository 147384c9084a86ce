"""
Model comparison and diagnostics for fitted models.

Likelihood ratio tests between nested fits, per-group normalized AIC/BIC,
Wald tests from the inverse Fisher information, and the GZT-correlogram
(stratified averages of standardized residual products) used to screen
candidate correlation covariates.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from .errors import (DegenerateSEError, EmptyStratumWarning, MissingCovariateError,
                     NegativeStatisticError, NotNestedError)
from .likelihood import FitResult
from .matcalc import vecl_indices
from .model import GroupedDataset, predict_structures

# a fitted alternative may sit this far below its null through rounding alone
LRT_SLACK = 1e-8


class LrtResult(NamedTuple):
    statistic: float
    df: int
    p_value: float


def chi2_sf(x, df):
    """Upper tail of chi^2_df via the regularized incomplete gamma function."""
    if df == 0:
        return 1.0 if x <= 0 else 0.0
    return float(special.gammaincc(0.5 * df, 0.5 * max(x, 0.0)))


def _check_nested(full: FitResult, null: FitResult):
    if full.fingerprint != null.fingerprint:
        raise NotNestedError("fits were computed on different datasets")
    for block in ("mean_names", "variance_names", "correlation_names"):
        extra = set(getattr(null, block)) - set(getattr(full, block))
        if extra:
            raise NotNestedError(
                f"null model has columns not in the full model: {sorted(extra)}")


def lrt(full: FitResult, null: FitResult) -> LrtResult:
    """Likelihood ratio test of ``null`` against the larger model ``full``.

    Nesting is checked structurally: every design column of the null model
    must also appear in the full model, and both fits must share the dataset
    fingerprint.  Null models built with ``GroupedDataset.restrict`` and a
    ``fixed`` value for dropped coefficients pass this check.
    """
    _check_nested(full, null)
    df = full.n_params - null.n_params
    if df < 0:
        raise NotNestedError("null model has more parameters than the full model")
    stat = 2.0 * (full.loglik - null.loglik)
    if stat < -LRT_SLACK:
        raise NegativeStatisticError(
            f"LRT statistic {stat:.3e} is negative; one of the fits did not converge")
    stat = max(stat, 0.0)
    return LrtResult(stat, df, chi2_sf(stat, df))


def aic_value(loglik, n_params, n):
    return (-2.0 * loglik + 2.0 * n_params) / n


def bic_value(loglik, n_params, n, n_obs):
    return (-2.0 * loglik + n_params * math.log(n_obs)) / n


def aic(fit: FitResult, n: int | None = None) -> float:
    """(-2 l + 2 k) / n with n the number of groups by default."""
    return aic_value(fit.loglik, fit.n_params, n or fit.n_groups)


def bic(fit: FitResult, n: int | None = None) -> float:
    """(-2 l + k log N) / n with N the total number of observations."""
    return bic_value(fit.loglik, fit.n_params, n or fit.n_groups, fit.n_obs)


def wald(fit: FitResult, index: int) -> tuple[float, float]:
    """z statistic and two-sided normal p-value for coefficient ``index``."""
    est = float(fit.estimates[index])
    se = float(fit.std_errors[index])
    if not np.isfinite(se) or se <= 0:
        raise DegenerateSEError(f"standard error of coefficient {index} is {se}")
    z = est / se
    return z, float(special.erfc(abs(z) / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# correlogram

@dataclass
class CorrelogramTable:
    """Per-stratum pooled averages and per-group values.

    Strata are half-open intervals (lo, hi] of the absolute covariate
    difference between the two members of a pair.
    """
    covariate: str
    strata: list                 # [(lo, hi), ...]
    means: np.ndarray            # pair-weighted average product per stratum
    pair_counts: np.ndarray
    group_values: list = field(default_factory=list)  # per stratum: [(group_id, value)]

    def rows(self):
        for (lo, hi), values in zip(self.strata, self.group_values):
            for gid, v in values:
                yield lo, hi, gid, v

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stratum_lo", "stratum_hi", "group_id", "value"])
            for lo, hi, gid, v in self.rows():
                w.writerow([repr(float(lo)), repr(float(hi)), gid, repr(float(v))])


def _pair_differences(data, covariate):
    out = []
    for g in data.groups:
        if g.size < 2:
            out.append(np.zeros(0))
            continue
        if covariate not in g.covariates:
            raise MissingCovariateError(
                f"group {g.group_id!r} has no numeric covariate {covariate!r}")
        v = g.covariates[covariate]
        r, c = vecl_indices(g.size)
        out.append(np.abs(v[r] - v[c]))
    return out


def default_strata(diffs, n_bins=3):
    """Equal-count quantile bins of the pooled absolute differences."""
    pooled = np.concatenate(diffs) if diffs else np.zeros(0)
    if pooled.size == 0:
        return []
    edges = np.quantile(pooled, np.linspace(0.0, 1.0, n_bins + 1))
    edges[0] = np.nextafter(edges[0], -np.inf)
    return [(float(lo), float(hi)) for lo, hi in zip(edges[:-1], edges[1:])]


def _check_strata(strata):
    strata = [(float(lo), float(hi)) for lo, hi in strata]
    for lo, hi in strata:
        if not hi > lo:
            raise ValueError(f"empty interval ({lo}, {hi}]")
    ordered = sorted(strata)
    for (_, hi), (lo, _) in zip(ordered[:-1], ordered[1:]):
        if lo < hi:
            raise ValueError("strata overlap")
    return strata


def gzt_correlogram(data: GroupedDataset, fit: FitResult, covariate: str,
                    strata: Sequence[tuple[float, float]] | None = None) -> CorrelogramTable:
    """Stratified averages of products of standardized residuals.

    Residuals are divided by the fitted standard deviation.  For every group
    and stratum the products over pairs whose absolute covariate difference
    falls in the stratum are averaged; groups without such pairs are left
    out of that stratum.
    """
    diffs = _pair_differences(data, covariate)
    strata = _check_strata(default_strata(diffs) if strata is None else strata)
    fitted = predict_structures(fit.params, data)
    values = [[] for _ in strata]
    sums = np.zeros(len(strata))
    counts = np.zeros(len(strata), dtype=int)
    for g, st, dv in zip(data.groups, fitted, diffs):
        if g.size < 2:
            continue
        e = (g.y - st.mu) / st.sd
        r, c = vecl_indices(g.size)
        prod = e[r] * e[c]
        for s, (lo, hi) in enumerate(strata):
            sel = (dv > lo) & (dv <= hi)
            k = int(sel.sum())
            if k:
                values[s].append((g.group_id, float(prod[sel].mean())))
                sums[s] += prod[sel].sum()
                counts[s] += k
    for s, k in enumerate(counts):
        if k == 0:
            warnings.warn(f"stratum {strata[s]} has no eligible pairs",
                          EmptyStratumWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return CorrelogramTable(covariate, strata, means, counts, values)
