import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from gztreg import gzt, matcalc
from gztreg.errors import (BadLengthError, BadPermutationError, MaxIterationsError,
                           NonFiniteError, NotPositiveDefiniteError)

from conftest import ar1, correlations

FORWARD_AR05 = np.array([0.5259052232230566, 0.13765867101582752, 0.5259052232230566])
AR05_JACOBIAN = np.array([[0.7358, 0.1875, 0.0142],
                          [0.1875, 0.9103, 0.1875],
                          [0.0142, 0.1875, 0.7358]])


def _fd_jacobian(R, h=1e-6):
    g = gzt.gzt_forward(R)
    cols = []
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = h
        cols.append((matcalc.vecl(gzt.gzt_inverse(g + e)) - matcalc.vecl(gzt.gzt_inverse(g - e)))
                    / (2 * h))
    return np.column_stack(cols)


class TestForward:
    @pytest.mark.parametrize("rho", [-0.95, -0.3, 0.0, 0.42, 0.99])
    def test_fisher_z(self, rho):
        assert gzt.gzt_forward([[1, rho], [rho, 1]])[0] == pytest.approx(math.atanh(rho), abs=1e-13)

    def test_identity_maps_to_zero(self):
        np.testing.assert_allclose(gzt.gzt_forward(np.eye(4)), 0.0, atol=1e-15)

    def test_rejects_invalid(self):
        with pytest.raises(NotPositiveDefiniteError):
            gzt.gzt_forward([[1, 1], [1, 1]])

    def test_ar_half_frozen(self):
        # frozen from scipy.linalg.logm of AR(0.5), 3x3
        np.testing.assert_allclose(gzt.gzt_forward(ar1(0.5, 3)), FORWARD_AR05, rtol=0, atol=1e-12)

    def test_stacked(self, rng):
        from gztreg.simulate import random_correlation
        Rs = np.stack([random_correlation(4, rng) for _ in range(3)])
        g = gzt.gzt_forward(Rs)
        for k in range(3):
            np.testing.assert_allclose(g[k], gzt.gzt_forward(Rs[k]), atol=1e-15)


class TestInverse:
    def test_zero_gives_identity(self):
        np.testing.assert_allclose(gzt.gzt_inverse(np.zeros(6)), np.eye(4), atol=1e-15)

    def test_m1(self):
        np.testing.assert_array_equal(gzt.gzt_inverse(np.zeros(0), 1), [[1.0]])

    def test_m2_tanh(self):
        R = gzt.gzt_inverse([0.7])
        assert R[0, 1] == pytest.approx(math.tanh(0.7), abs=1e-14)

    def test_bad_length(self):
        with pytest.raises(BadLengthError):
            gzt.gzt_inverse(np.zeros(4))

    def test_nonfinite(self):
        with pytest.raises(NonFiniteError):
            gzt.gzt_inverse([np.inf])

    def test_iteration_cap(self):
        with pytest.raises(MaxIterationsError):
            gzt.gzt_inverse(gzt.gzt_forward(ar1(0.9, 5)), maxiter=2)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            gzt.gzt_inverse([0.1], method="bisection")

    def test_newton_and_warm_start_agree(self, rng):
        from gztreg.simulate import random_correlation
        R = random_correlation(8, rng)
        g = gzt.gzt_forward(R)
        fp = gzt.gzt_inverse(g, full_output=True)
        nt = gzt.gzt_inverse(g, method="newton", full_output=True)
        warm = gzt.gzt_inverse(g, x0=fp.log_diag + 1e-3, full_output=True)
        for res in (fp, nt, warm):
            np.testing.assert_allclose(res.R, R, atol=1e-11)
        assert nt.iterations < fp.iterations
        assert warm.iterations < fp.iterations
        # x* is the diagonal of log R
        np.testing.assert_allclose(fp.log_diag, np.diag(matcalc.matrix_log(R)), atol=1e-11)

    def test_extreme_gamma_still_valid(self):
        R = gzt.gzt_inverse(np.full(10, 4.0))
        matcalc.check_correlation(R)
        assert np.all(R[np.tril_indices(5, -1)] > 0.99)

    @given(correlations(max_dim=10))
    def test_round_trip(self, R):
        np.testing.assert_allclose(gzt.gzt_inverse(gzt.gzt_forward(R)), R, atol=1e-10)

    @given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.1, 1.0),
           st.sampled_from(["fixed_point", "newton"]))
    def test_any_gamma_gives_correlation(self, m, seed, scale, method):
        g = scale * np.random.default_rng(seed).standard_normal(m * (m - 1) // 2)
        R = gzt.gzt_inverse(g, m, method=method)
        matcalc.check_correlation(R)
        np.testing.assert_allclose(gzt.gzt_forward(R), g, atol=1e-9)

    @given(st.integers(3, 7), st.integers(0, 2**32 - 1), st.floats(1.0, 3.0))
    def test_extreme_gamma_newton(self, m, seed, scale):
        # near-singular R: check the defining condition diag(exp G[x*]) = 1
        g = scale * np.random.default_rng(seed).standard_normal(m * (m - 1) // 2)
        res = gzt.gzt_inverse(g, m, method="newton", full_output=True)
        E = matcalc.matrix_exp(matcalc.vecl_inverse(g, res.log_diag))
        np.testing.assert_allclose(np.diag(E), 1.0, atol=1e-10)


class TestDividedDifferences:
    def test_against_high_precision(self):
        lam = np.array([-0.3, -0.3 + 1e-9, 0.2, 1.7])
        xi = gzt.divided_differences(lam)
        mpmath.mp.dps = 40
        for i in range(4):
            for j in range(4):
                a, b = mpmath.mpf(lam[i]), mpmath.mpf(lam[j])
                ref = mpmath.exp(a) if a == b else (mpmath.exp(a) - mpmath.exp(b)) / (a - b)
                assert xi[i, j] == pytest.approx(float(ref), rel=1e-9)

    def test_tie_limit(self):
        xi = gzt.divided_differences(np.array([0.5, 0.5]))
        np.testing.assert_allclose(xi, math.exp(0.5), rtol=1e-15)

    def test_frechet_matches_finite_difference(self, rng):
        A = rng.standard_normal((3, 3))
        A = 0.5 * (A + A.T)
        F = gzt.exp_frechet_matrix(matcalc.eigh(A))
        E = rng.standard_normal((3, 3))
        E = 0.5 * (E + E.T)
        h = 1e-6
        fd = (matcalc.matrix_exp(A + h * E) - matcalc.matrix_exp(A - h * E)) / (2 * h)
        np.testing.assert_allclose(F @ E.ravel(order="F"), fd.ravel(order="F"), atol=1e-8)


class TestJacobian:
    def test_ar_half_reference(self):
        np.testing.assert_allclose(gzt.gzt_jacobian(ar1(0.5, 3)), AR05_JACOBIAN, atol=5e-4)

    def test_ar_negative_half_signs(self):
        J = gzt.gzt_jacobian(ar1(-0.5, 3))
        np.testing.assert_array_equal(np.sign(J), [[1, -1, 1], [-1, 1, -1], [1, -1, 1]])

    def test_identity(self):
        np.testing.assert_allclose(gzt.gzt_jacobian(np.eye(5)), np.eye(10), atol=1e-14)

    def test_m2_sech2(self):
        rho = 0.6
        J = gzt.gzt_jacobian([[1, rho], [rho, 1]])
        assert J[0, 0] == pytest.approx(1 - rho ** 2, abs=1e-12)

    @pytest.mark.parametrize("m", [3, 4, 6])
    def test_finite_difference(self, m, rng):
        from gztreg.simulate import random_correlation
        R = random_correlation(m, rng)
        np.testing.assert_allclose(gzt.gzt_jacobian(R), _fd_jacobian(R), atol=1e-7)

    @given(correlations(max_dim=7))
    def test_diagonal_nonnegative(self, R):
        assert np.all(np.diag(gzt.gzt_jacobian(R)) >= -1e-12)

    @given(correlations(max_dim=6))
    def test_symmetric(self, R):
        J = gzt.gzt_jacobian(R)
        np.testing.assert_allclose(J, J.T, atol=1e-12)


class TestPermutation:
    def test_bad_permutation(self):
        with pytest.raises(BadPermutationError):
            gzt.permute(np.eye(3), [0, 0, 1])
        with pytest.raises(BadPermutationError):
            gzt.permute(np.eye(3), [0, 1])
        with pytest.raises(BadPermutationError):
            gzt.pair_permutation([0, 3, 1])

    def test_pair_permutation_swap(self):
        # swapping variables 0 and 1 of a 3x3: pairs (1,0),(2,0),(2,1) -> (1,0),(2,1),(2,0)
        np.testing.assert_array_equal(gzt.pair_permutation([1, 0, 2]), [0, 2, 1])

    @given(correlations(max_dim=8), st.randoms(use_true_random=False))
    def test_order_invariance(self, R, rnd):
        perm = list(range(R.shape[0]))
        rnd.shuffle(perm)
        lhs = gzt.gzt_forward(gzt.permute(R, perm))
        rhs = gzt.gzt_forward(R)[gzt.pair_permutation(perm)]
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)
