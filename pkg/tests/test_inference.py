import csv
import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gztreg import inference
from gztreg.errors import (DegenerateSEError, EmptyStratumWarning, NegativeStatisticError,
                           NotNestedError)
from gztreg.gzt import gzt_inverse
from gztreg.likelihood import fit
from gztreg.matcalc import vecl_indices
from gztreg.model import GroupData, GroupedDataset, predict_structures
from gztreg.simulate import SimDesign, generate


@pytest.fixture(scope="module")
def case2():
    sim = generate(SimDesign("study2", n=60, seed=21, case="II"))
    data = sim.dataset
    full = fit(data)
    null_data = data.restrict(correlation=["intercept", "same_subgroup:class"])
    null = fit(null_data)
    return sim, full, null, null_data


class TestLrt:
    def test_identical(self, case2):
        _, full, _, _ = case2
        res = inference.lrt(full, full)
        assert res == (0.0, 0, 1.0)

    def test_nested(self, case2):
        _, full, null, _ = case2
        res = inference.lrt(full, null)
        assert res.df == 1
        assert res.statistic == pytest.approx(2 * (full.loglik - null.loglik))
        assert res.p_value == pytest.approx(stats.chi2.sf(res.statistic, 1), rel=1e-10)
        # the time-distance effect is real in this design
        assert res.p_value < 0.01

    def test_not_nested(self, case2):
        _, full, null, _ = case2
        with pytest.raises(NotNestedError):
            inference.lrt(null, full)

    def test_different_data(self, case2):
        _, full, _, _ = case2
        other = dataclasses.replace(full, fingerprint="0" * 16)
        with pytest.raises(NotNestedError):
            inference.lrt(full, other)

    def test_negative_statistic(self, case2):
        _, full, null, _ = case2
        worse = dataclasses.replace(full, loglik=null.loglik - 1.0)
        with pytest.raises(NegativeStatisticError):
            inference.lrt(worse, null)

    def test_slack_clips_to_zero(self, case2):
        _, full, null, _ = case2
        tied = dataclasses.replace(full, loglik=null.loglik - 1e-9)
        assert inference.lrt(tied, null).statistic == 0.0


class TestChi2:
    @given(st.floats(0, 60), st.integers(1, 30))
    def test_matches_scipy(self, x, df):
        ref = stats.chi2.sf(x, df)
        assert inference.chi2_sf(x, df) == pytest.approx(ref, rel=1e-10, abs=1e-300)

    def test_df2_closed_form(self):
        assert inference.chi2_sf(3.0, 2) == pytest.approx(math.exp(-1.5), rel=1e-14)


class TestInformationCriteria:
    def test_classroom_scale_identity(self):
        # l = -4156.30 with 15 parameters over 105 groups gives 79.45
        assert inference.aic_value(-4156.30, 15, 105) == pytest.approx(79.45, abs=5e-3)

    def test_zero_parameters(self):
        assert inference.aic_value(-10.0, 0, 4) == 5.0

    def test_aic_difference_equals_lrt(self, case2):
        _, full, null, _ = case2
        res = inference.lrt(full, null)
        n = full.n_groups
        assert inference.aic(full) - inference.aic(null) == pytest.approx(
            (2 * res.df - res.statistic) / n, rel=1e-12)

    def test_bic(self, case2):
        _, full, _, _ = case2
        expect = (-2 * full.loglik + full.n_params * math.log(full.n_obs)) / full.n_groups
        assert inference.bic(full) == pytest.approx(expect, rel=1e-14)

    def test_penalty_per_parameter(self):
        assert inference.aic_value(-5.0, 4, 10) - inference.aic_value(-5.0, 3, 10) == pytest.approx(0.2)


class TestWald:
    def _fit(self, case2, est, se):
        _, full, _, _ = case2
        omega = full.estimates.copy()
        omega[0] = est
        ses = full.std_errors.copy()
        ses[0] = se
        params = type(full.params).from_flat(omega, full.params.dims)
        return dataclasses.replace(full, params=params, std_errors=ses)

    def test_zero(self, case2):
        assert inference.wald(self._fit(case2, 0.0, 0.3), 0) == (0.0, 1.0)

    def test_196(self, case2):
        z, p = inference.wald(self._fit(case2, 1.96 * 0.3, 0.3), 0)
        assert z == pytest.approx(1.96)
        assert p == pytest.approx(0.05, abs=1e-4)

    @pytest.mark.parametrize("se", [0.0, np.nan, -1.0])
    def test_degenerate(self, case2, se):
        with pytest.raises(DegenerateSEError):
            inference.wald(self._fit(case2, 1.0, se), 0)


class TestCorrelogram:
    def test_single_stratum_is_overall_average(self, case2):
        _, _, null, data = case2
        table = inference.gzt_correlogram(data, null, "t", [(-1.0, 2.0)])
        prods = []
        for g, s in zip(data.groups, predict_structures(null.params, data)):
            e = (g.y - s.mu) / s.sd
            r, c = vecl_indices(g.size)
            prods.append(e[r] * e[c])
        prods = np.concatenate(prods)
        assert table.means[0] == pytest.approx(prods.mean(), rel=1e-12)
        assert table.pair_counts[0] == prods.size

    def test_default_strata_equal_counts(self, case2):
        _, _, null, data = case2
        table = inference.gzt_correlogram(data, null, "t")
        assert len(table.strata) == 3
        assert np.ptp(table.pair_counts) <= 1
        total = sum(g.size * (g.size - 1) // 2 for g in data.groups)
        assert table.pair_counts.sum() == total

    def test_empty_stratum_warns(self, case2):
        _, _, null, data = case2
        with pytest.warns(EmptyStratumWarning):
            table = inference.gzt_correlogram(data, null, "t", [(0.0, 1.0), (5.0, 6.0)])
        assert np.isnan(table.means[1]) and table.pair_counts[1] == 0

    def test_overlapping_strata(self, case2):
        _, _, null, data = case2
        with pytest.raises(ValueError):
            inference.gzt_correlogram(data, null, "t", [(0.0, 0.5), (0.4, 1.0)])

    def test_csv(self, case2, tmp_path):
        _, _, null, data = case2
        table = inference.gzt_correlogram(data, null, "t")
        path = tmp_path / "c.csv"
        table.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["stratum_lo", "stratum_hi", "group_id", "value"]
        assert len(rows) - 1 == sum(len(v) for v in table.group_values)

    def test_independent_data_near_zero(self):
        sim = generate(SimDesign("family", n=400, seed=3, family="banded", rho=0.0, m=6))
        data = sim.dataset.restrict(correlation=[])
        res = fit(data)
        table = inference.gzt_correlogram(data, res, "time")
        for mean, k in zip(table.means, table.pair_counts):
            assert abs(mean) < 3 / math.sqrt(k)

    def test_decreasing_with_negative_difference_effect(self):
        reps = 200
        hits = 0
        for rep in range(reps):
            data, _ = _difference_design(rep)
            table = inference.gzt_correlogram(data, fit(data), "u")
            hits += bool(np.all(np.diff(table.means) < 0))
        assert hits >= 0.9 * reps

    def test_true_sd_recovers_average_correlation(self):
        data, corrs = _difference_design(7, n=2000, alpha=(0.3, -0.6))
        res = fit(data)
        truth = type(res.params)(np.array([1.0]), np.zeros(0), np.array([0.0]))
        res = dataclasses.replace(res, params=truth)
        table = inference.gzt_correlogram(data, res, "u")
        diffs = np.concatenate([np.abs(g.covariates["u"][r] - g.covariates["u"][c])
                                for g in data.groups
                                for r, c in [vecl_indices(g.size)]])
        rho = np.concatenate(corrs)
        for (lo, hi), mean in zip(table.strata, table.means):
            sel = (diffs > lo) & (diffs <= hi)
            assert mean == pytest.approx(rho[sel].mean(), abs=0.03)


def _difference_design(seed, n=100, m=6, alpha=(0.8, -1.5)):
    """Longitudinal groups whose only correlation effect is |u_j - u_k|."""
    rng = np.random.default_rng(seed)
    groups, corrs = [], []
    for i in range(n):
        u = np.sort(rng.uniform(0.0, 1.0, m))
        r, c = vecl_indices(m)
        W = np.column_stack([np.ones(r.size), np.abs(u[r] - u[c])])
        R = gzt_inverse(W @ np.array(alpha), m)
        y = 1.0 + np.linalg.cholesky(R) @ rng.standard_normal(m)
        groups.append(GroupData(f"g{i}", y, np.ones((m, 1)), np.ones((m, 1)),
                                np.empty((r.size, 0)), covariates={"u": u}))
        corrs.append(R[r, c])
    return GroupedDataset(groups, ("intercept",), ("intercept",), ()), corrs
