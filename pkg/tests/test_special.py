"""Accuracy checks for the elliptical special functions.

Reference values were generated offline with mpmath at 30 significant
digits: univariate CDFs through erf/incomplete-beta identities, bivariate
CDFs by direct high-precision quadrature of the densities.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from mixcop.special import (
    bvn_cdf,
    bvt_cdf,
    bvt_cdf_batch,
    bvt_nodes,
    inv_sqrt_sym,
    mvn_logpdf_corr,
    mvt_logpdf_corr,
    std_normal_cdf,
    std_normal_quantile,
    student_t_cdf,
    student_t_quantile,
)


def _orthant(rho):
    # closed form for P(X<=0, Y<=0) under correlation rho
    return 0.25 + np.arcsin(rho) / (2.0 * np.pi)


class TestUnivariate:
    def test_normal_cdf_value(self):
        assert_allclose(std_normal_cdf(1.0), 0.84134474606854294859, rtol=1e-14)

    def test_normal_quantile_value(self):
        assert_allclose(std_normal_quantile(0.975), 1.9599639845400542355, rtol=1e-14)

    def test_t_cdf_values(self):
        assert_allclose(student_t_cdf(2.0, 4.0), 0.94194173824159220275, rtol=1e-13)
        assert_allclose(student_t_cdf(-1.5, 7.0), 0.088649243494985016577, rtol=1e-13)

    def test_round_trip(self):
        p = np.array([0.01, 0.2, 0.5, 0.8, 0.99])
        assert_allclose(std_normal_cdf(std_normal_quantile(p)), p, rtol=1e-12)
        assert_allclose(student_t_cdf(student_t_quantile(p, 6.0), 6.0), p, rtol=1e-12)

    def test_t_cdf_approaches_normal(self):
        x = np.linspace(-3, 3, 13)
        assert_allclose(student_t_cdf(x, 1e7), std_normal_cdf(x), atol=5e-8)


class TestBvnCdf:
    # (x, y, rho, expected) -- mpmath 2-d quadrature of the density
    CASES = [
        (1.0, -0.5, 0.3, 0.283138420244481),
        (0.3, 0.7, 0.3, 0.5055675266258393),
        (0.3, 0.7, 0.75, 0.5723789772449056),
        (-0.4, 2.0, 0.93, 0.3445782583885255),
        (0.5, -0.3, 0.96, 0.3820102660514335),
        (1.2, 0.8, -0.97, 0.673074931194895),
    ]

    @pytest.mark.parametrize("x, y, rho, expected", CASES)
    def test_reference_values(self, x, y, rho, expected):
        assert_allclose(bvn_cdf(x, y, rho), expected, atol=5e-15)

    @pytest.mark.parametrize("rho", [-0.99, -0.925, -0.75, -0.3, 0.0, 0.3, 0.5, 0.75, 0.9, 0.925, 0.99])
    def test_orthant_identity(self, rho):
        assert_allclose(bvn_cdf(0.0, 0.0, rho), _orthant(rho), atol=1e-12)

    def test_boundary_correlations(self):
        u1 = std_normal_cdf(0.4)
        u2 = std_normal_cdf(-1.1)
        assert bvn_cdf(0.4, -1.1, 1.0) == pytest.approx(min(u1, u2), abs=1e-15)
        assert bvn_cdf(0.4, -1.1, -1.0) == pytest.approx(max(u1 + u2 - 1.0, 0.0), abs=1e-15)

    def test_zero_correlation_factorizes(self):
        assert_allclose(bvn_cdf(0.7, -0.2, 0.0), std_normal_cdf(0.7) * std_normal_cdf(-0.2), rtol=1e-14)

    def test_band_seams_are_continuous(self):
        for seam in (0.3, 0.75, 0.925):
            lo = bvn_cdf(0.3, 0.7, seam - 1e-9)
            hi = bvn_cdf(0.3, 0.7, seam + 1e-9)
            assert abs(hi - lo) < 1e-7

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=50)
        y = rng.normal(size=50)
        r = rng.uniform(-0.99, 0.99, size=50)
        vec = bvn_cdf(x, y, r)
        for i in range(50):
            assert_allclose(vec[i], bvn_cdf(x[i], y[i], r[i]), rtol=1e-14)

    def test_extreme_arguments(self):
        assert bvn_cdf(50.0, 50.0, 0.5) == 1.0
        assert bvn_cdf(-50.0, 0.0, 0.5) == 0.0
        assert_allclose(bvn_cdf(50.0, 0.3, -0.6), std_normal_cdf(0.3), rtol=1e-14)

    @given(
        x=st.floats(-6, 6),
        y=st.floats(-6, 6),
        rho=st.floats(-0.999, 0.999),
    )
    @settings(max_examples=200, deadline=None)
    def test_frechet_bounds_and_symmetry(self, x, y, rho):
        u1 = float(std_normal_cdf(x))
        u2 = float(std_normal_cdf(y))
        c = bvn_cdf(x, y, rho)
        assert max(u1 + u2 - 1.0, 0.0) - 1e-12 <= c <= min(u1, u2) + 1e-12
        assert bvn_cdf(y, x, rho) == pytest.approx(c, abs=1e-14)

    @given(
        x=st.floats(-4, 4),
        y=st.floats(-4, 4),
        rho=st.floats(-0.99, 0.99),
        dx=st.floats(0.01, 2.0),
    )
    @settings(max_examples=150, deadline=None)
    def test_monotone_in_upper_limit(self, x, y, rho, dx):
        assert bvn_cdf(x + dx, y, rho) >= bvn_cdf(x, y, rho) - 1e-13


class TestBvtCdf:
    def test_reference_value(self):
        assert_allclose(bvt_cdf(1.0, 0.5, 0.4, 4.0), 0.5966892760280576, atol=1e-9)

    @pytest.mark.parametrize("rho", [-0.9, -0.5, 0.0, 0.5, 0.9])
    @pytest.mark.parametrize("nu", [3.0, 10.0])
    def test_orthant_identity(self, rho, nu):
        assert_allclose(bvt_cdf(0.0, 0.0, rho, nu), _orthant(rho), atol=1e-9)

    def test_boundary_correlations(self):
        u1 = float(student_t_cdf(0.8, 5.0))
        u2 = float(student_t_cdf(-0.2, 5.0))
        assert bvt_cdf(0.8, -0.2, 1.0, 5.0) == pytest.approx(min(u1, u2), abs=1e-15)
        assert bvt_cdf(0.8, -0.2, -1.0, 5.0) == pytest.approx(max(u1 + u2 - 1.0, 0.0), abs=1e-15)

    def test_zero_correlation_factorizes(self):
        got = bvt_cdf(0.7, -0.2, 0.0, 6.0)
        # independence does *not* factorize for t (shared mixing variable),
        # but the orthant must still match the elliptical closed form
        assert_allclose(bvt_cdf(0.0, 0.0, 0.0, 6.0), 0.25, atol=1e-10)
        assert 0.0 < got < 1.0

    def test_heavy_tail_exceeds_normal_in_corner(self):
        # lower-left corner mass is larger under t than normal
        assert bvt_cdf(-2.5, -2.5, 0.5, 4.0) > bvn_cdf(-2.5, -2.5, 0.5)

    def test_large_df_approaches_normal(self):
        assert_allclose(bvt_cdf(0.8, -0.3, 0.6, 1e6), bvn_cdf(0.8, -0.3, 0.6), atol=2e-6)

    def test_batch_matches_adaptive(self):
        rng = np.random.default_rng(7)
        h = rng.normal(size=40)
        k = rng.normal(size=40)
        rho = rng.uniform(-0.95, 0.95, size=40)
        for nu in (3.0, 8.0):
            got = bvt_cdf_batch(h, k, rho, nu)
            want = np.array([bvt_cdf(h[i], k[i], rho[i], nu) for i in range(40)])
            assert_allclose(got, want, atol=5e-6)

    def test_batch_with_cached_nodes(self):
        h = np.array([-1.0, 0.0, 1.5])
        k = np.array([0.5, -0.5, 2.0])
        nodes = bvt_nodes(h, 5.0)
        a = bvt_cdf_batch(h, k, 0.4, 5.0, nodes=nodes)
        b = bvt_cdf_batch(h, k, 0.4, 5.0)
        assert_allclose(a, b, rtol=1e-14)

    def test_batch_boundary_correlation(self):
        h = np.array([0.3, -0.7])
        k = np.array([0.1, 0.9])
        got = bvt_cdf_batch(h, k, np.array([1.0, -1.0]), 4.0)
        u1 = student_t_cdf(h, 4.0)
        u2 = student_t_cdf(k, 4.0)
        assert_allclose(got[0], min(u1[0], u2[0]), rtol=1e-14)
        assert_allclose(got[1], max(u1[1] + u2[1] - 1.0, 0.0), rtol=1e-14)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            bvt_cdf(0.0, 0.0, 1.5, 4.0)
        with pytest.raises(ValueError):
            bvt_cdf(0.0, 0.0, 0.5, -1.0)
        with pytest.raises(ValueError):
            bvn_cdf(0.0, 0.0, 1.01)


class TestDensities:
    def _ar1(self, xi, times):
        t = np.asarray(times, dtype=float)
        return np.exp(-xi * np.abs(t[:, None] - t[None, :]))

    def test_mvn_logpdf_reference(self):
        corr = self._ar1(0.3, [1, 2, 3])
        z = np.array([0.3, -0.6, 1.1])
        assert_allclose(mvn_logpdf_corr(z, corr)[0], -5.398696565193516, rtol=1e-12)

    def test_mvt_logpdf_reference(self):
        corr = self._ar1(0.3, [1, 2, 3])
        z = np.array([0.3, -0.6, 1.1])
        assert_allclose(mvt_logpdf_corr(z, corr, 5.0)[0], -5.288463796384062, rtol=1e-12)

    def test_mvt_large_df_approaches_mvn(self):
        corr = self._ar1(0.5, [1, 2, 3, 4])
        z = np.array([[0.2, -0.4, 0.9, -1.3]])
        assert_allclose(mvt_logpdf_corr(z, corr, 1e8), mvn_logpdf_corr(z, corr), atol=1e-5)

    def test_mvn_identity_matches_univariate_product(self):
        z = np.array([[0.5, -1.2]])
        got = mvn_logpdf_corr(z, np.eye(2))[0]
        want = np.sum(-0.5 * np.log(2 * np.pi) - 0.5 * z**2)
        assert_allclose(got, want, rtol=1e-13)

    def test_inv_sqrt_sym(self):
        corr = self._ar1(0.4, [1, 2, 3])
        s = inv_sqrt_sym(corr)
        assert_allclose(s @ corr @ s, np.eye(3), atol=1e-12)
        assert_allclose(s, s.T, atol=1e-13)

    def test_inv_sqrt_rejects_indefinite(self):
        with pytest.raises(np.linalg.LinAlgError):
            inv_sqrt_sym(np.array([[1.0, 2.0], [2.0, 1.0]]))
