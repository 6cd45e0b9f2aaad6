"""Tests for the enumeration module: exact recursions, series, blob
weights, offspring laws, polytope Monte Carlo and size tails.

Oracle values were computed independently with mpmath at 40 digits (and,
for the small cases, by hand from the recursions) before the module was
written; they are frozen here as decimals.
"""

import math
import warnings
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest

from wpsphere import genfun, specfun

# frozen oracles (mpmath dps=40)
X_C = 0.0632476804013394822
Z_XC = 0.146489811747380289
Q = 0.121563176910185986
SIGMA2 = 1.72286479635557336
C_HAT = 0.807299412883258255
TAIL_RATE = 0.480504487037328078

P0 = 0.52028650458903769742        # x_c / q
P1 = 0.15605739621193833132        # x_c pi^2 / 4
P_LEAF1 = 0.82984048829156835581   # q / Z(x_c)
XC_OVER_ZC = 0.43175480701968036297
P50_ROOT = 0.46079520769289905319  # p_50^(1/50)

LIM0 = 0.33178479754987838758      # lim n^{3/2} P_0(|tau|=n)
LIM_HALF = 0.26784967226560752438  # same at theta = pi/2

B3 = 1.2337005501361698274         # pi^2 / 8
BL2 = 2.4674011002723396547        # pi^2 / 4
BL3 = 7.6100852370314404091        # 5 pi^4 / 64

MU_A3 = 4.9348022005446793094      # pi^2 / 2
MU_A4 = 40.587121264167682182      # 5 pi^4 / 12
MU_A5 = 407.25514450064979624      # 61 pi^6 / 144
MU_A6 = 4543.2931497087922069      # 1379 pi^8 / (4! 5!)

A_VALUES = {3: 1, 4: 1, 5: 5, 6: 61, 7: 1379, 8: 49946}

CATALAN = {0: 1, 1: 1, 2: 2, 3: 5, 4: 14, 5: 42, 6: 132}


class TestZograf:
    def test_known_values(self):
        for n, a in A_VALUES.items():
            got = genfun.zograf_a(n)
            assert isinstance(got, Fraction)
            assert got == Fraction(a)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            genfun.zograf_a(2)
        with pytest.raises(ValueError):
            genfun.zograf_a(0)

    def test_positive_rationals(self):
        for n in range(3, 25):
            assert genfun.zograf_a(n) > 0

    def test_volumes(self):
        with mp.workdps(40):
            assert genfun.wp_volume(0, 3) == 1
            assert abs(genfun.wp_volume(0, 4) / (2 * mp.pi**2) - 1) < mp.mpf("1e-35")
            assert abs(genfun.wp_volume(0, 5) / (10 * mp.pi**4) - 1) < mp.mpf("1e-35")

    def test_volume_domain(self):
        with pytest.raises(NotImplementedError):
            genfun.wp_volume(1, 5)
        with pytest.raises(ValueError):
            genfun.wp_volume(0, 2)


class TestPowerSeries:
    def _ps(self, *vals):
        with mp.workdps(60):
            return genfun.PowerSeries([mp.mpf(v) for v in vals])

    def test_mul_exact(self):
        a = self._ps(1, 2, 3)
        sq = a * a
        assert [float(c) for c in sq.coeffs] == [1.0, 4.0, 10.0]

    def test_mul_truncates_to_shorter(self):
        a = self._ps(1, 1, 1, 1, 1)
        b = self._ps(1, 1)
        assert (a * b).order == 1

    def test_compose_identity(self):
        f = self._ps(0, 2, -1, 5)
        ident = self._ps(0, 1, 0, 0)
        g = f.compose(ident)
        assert [float(c) for c in g.coeffs] == [0.0, 2.0, -1.0, 5.0]

    def test_compose_needs_zero_constant(self):
        with pytest.raises(ValueError):
            self._ps(1, 1).compose(self._ps(1, 1))

    def test_reciprocal(self):
        f = self._ps(2, 1, -3, 4)
        g = f.reciprocal()
        prod = f * g
        assert abs(prod.coeffs[0] - 1) < mp.mpf("1e-55")
        assert all(abs(c) < mp.mpf("1e-55") for c in prod.coeffs[1:])

    def test_reciprocal_needs_unit(self):
        with pytest.raises(ZeroDivisionError):
            self._ps(0, 1).reciprocal()

    def test_evaluate(self):
        f = self._ps(1, -2, 3)
        assert abs(float(f.evaluate(0.5)) - (1 - 1 + 0.75)) < 1e-15

    def test_scale_arg_and_derivative(self):
        f = self._ps(0, 1, 1)
        g = f.scale_arg(2)  # 2x + 4x^2
        assert [float(c) for c in g.coeffs] == [0.0, 2.0, 4.0]
        d = f.derivative()  # 1 + 2x
        assert [float(c) for c in d.coeffs] == [1.0, 2.0]


class TestZSeries:
    def test_low_coefficients(self):
        z = genfun.z_series(10)
        with mp.workdps(40):
            assert z[1] == 1
            assert abs(z[2] / (mp.pi**2 / 2) - 1) < mp.mpf("1e-35")
            assert abs(z[3] / (5 * mp.pi**4 / 12) - 1) < mp.mpf("1e-35")
            assert abs(z[4] / (61 * mp.pi**6 / 144) - 1) < mp.mpf("1e-35")

    def test_positive(self):
        z = genfun.z_series(60)
        assert all(z[m] > 0 for m in range(1, 61))

    def test_reversion_identity_order_30(self):
        z = genfun.z_series(30)
        s = genfun.s_series(mp.pi, 30)
        comp = s.compose(z)
        res = max(abs(comp[m] - (1 if m == 1 else 0)) for m in range(31))
        assert res < mp.mpf("1e-10")  # measured 1.9e-29

    def test_reversion_identity_order_60_normalized(self):
        z = genfun.z_series(60)
        s = genfun.s_series(mp.pi, 60)
        comp = s.compose(z)
        with mp.workdps(60):
            xc = mp.mpf(X_C)
            res = max(
                abs(comp[m] - (1 if m == 1 else 0)) * xc**m for m in range(61)
            )
        assert res < mp.mpf("1e-30")  # measured 6.4e-64

    def test_volume_cross_check(self):
        # [x^{n-2}] Z against the exact-rational recursion, two code paths
        z = genfun.z_series(18)
        with mp.workdps(40):
            for n in range(3, 21):
                a = genfun.zograf_a(n)
                ref = (
                    mp.pi ** (2 * (n - 3))
                    * mp.mpf(a.numerator)
                    / a.denominator
                    / (mp.factorial(n - 3) * mp.factorial(n - 2))
                )
                assert abs(z[n - 2] / ref - 1) < mp.mpf("1e-30")

    def test_growth_rate(self):
        z = genfun.z_series(60)
        for m in range(20, 60):
            ratio = float(z[m] / z[m - 1]) * X_C
            assert 0.90 < ratio < 1.0

    def test_order_one(self):
        z = genfun.z_series(1)
        assert z.order == 1 and z[0] == 0 and z[1] == 1
        with pytest.raises(ValueError):
            genfun.z_series(0)


class TestFSeries:
    def test_linear_coefficient(self):
        for theta in (0.0, 0.7, math.pi / 2, 2.8):
            f = genfun.f_series(theta, 12)
            assert abs(f[1] - 1) < mp.mpf("1e-50")

    def test_boundary_pi(self):
        f = genfun.f_series(mp.pi, 30)
        assert abs(f[1] - 1) < mp.mpf("1e-40")
        assert max(abs(f[m]) for m in range(2, 31)) < mp.mpf("1e-12")

    def test_boundary_pi_float_input(self):
        # float pi is a hair below pi; the identity should still hold to
        # the float rounding level scaled by the coefficient growth
        f = genfun.f_series(math.pi, 20)
        with mp.workdps(60):
            xc = mp.mpf(X_C)
            assert max(abs(f[m]) * xc**m for m in range(2, 21)) < mp.mpf("1e-14")

    def test_theta_zero_is_z(self):
        f = genfun.f_series(0.0, 25)
        z = genfun.z_series(25)
        assert all(abs(f[m] - z[m]) < mp.mpf("1e-45") for m in range(26))

    def test_quadratic_coefficient(self):
        with mp.workdps(60):
            half_pi = mp.pi / 2
        f = genfun.f_series(half_pi, 5)
        with mp.workdps(40):
            assert abs(f[2] / (3 * mp.pi**2 / 8) - 1) < mp.mpf("1e-35")

    def test_against_closed_form(self):
        # evaluate the series at x = x_c/2 and compare with
        # sqrt(y) J1(2 theta sqrt(y))/theta at the bisection root of S(y) = x
        with mp.workdps(40):
            xc = mp.besseljzero(0, 1) * mp.besselj(1, mp.besseljzero(0, 1)) / (2 * mp.pi**2)
            zc = (mp.besseljzero(0, 1) / (2 * mp.pi)) ** 2
            x_eval = xc / 2
            yroot = mp.findroot(
                lambda y: mp.sqrt(y) * mp.besselj(1, 2 * mp.pi * mp.sqrt(y)) / mp.pi - x_eval,
                (mp.mpf("1e-8"), zc),
                solver="bisect",
                tol=mp.mpf("1e-35"),
            )
            for th in (mp.mpf("0.3"), mp.mpf("1.2"), mp.mpf("2.5"), mp.pi):
                closed = mp.sqrt(yroot) * mp.besselj(1, 2 * th * mp.sqrt(yroot)) / th
                val = genfun.f_series(th, 60).evaluate(x_eval)
                assert abs(val / closed - 1) < mp.mpf("1e-18")

    def test_domain(self):
        with pytest.raises(ValueError):
            genfun.f_series(-0.1, 5)
        with pytest.raises(ValueError):
            genfun.f_series(3.3, 5)
        with pytest.raises(ValueError):
            genfun.f_series(1.0, 0)


class TestBlobWeights:
    def test_small_values(self):
        b, bl = genfun.blob_weights(12)
        assert b[0] == 0.0 and bl[0] == 0.0
        assert b[1] == 0.0 and b[2] == 0.0
        assert bl[1] == 1.0
        assert abs(bl[2] - BL2) < 1e-12
        assert abs(b[3] - B3) < 1e-12
        assert abs(bl[3] - BL3) < 1e-11

    def test_marked_weights_vs_volumes(self):
        # B_leaf_k = 8^{1-k} V_{0,k+2} / (k-1)!
        _, bl = genfun.blob_weights(12)
        with mp.workdps(40):
            for k in range(1, 13):
                ref = float(
                    mp.mpf(8) ** (1 - k) * genfun.wp_volume(0, k + 2) / mp.factorial(k - 1)
                )
                assert abs(bl[k] / ref - 1) < 1e-12

    def test_positivity_and_growth(self):
        b, bl = genfun.blob_weights(61)
        assert all(b[k] > 0 for k in range(3, 62))
        assert all(bl[k] > 0 for k in range(1, 62))
        # both families grow at the rate 1/(4 x_c), up to k^{-1/2} corrections
        assert 0.95 < b[50] / b[49] * (4 * X_C) < 1.01
        assert 0.95 < bl[50] / bl[49] * (4 * X_C) < 1.01

    def test_edge_cases(self):
        b, bl = genfun.blob_weights(1)
        assert b[1] == 0.0 and bl[1] == 1.0
        with pytest.raises(ValueError):
            genfun.blob_weights(0)


@pytest.fixture(scope="module")
def law():
    return genfun.offspring(60)


class TestOffspring:
    def test_first_entries(self, law):
        assert abs(law.p[0] - P0) < 1e-13
        assert abs(law.p[1] - P1) < 1e-13
        assert law.r[0] == 1.0
        assert law.r[1] == 1.0

    def test_probability_vector(self, law):
        assert (law.p >= 0).all()
        assert abs(law.deficit) < 1e-12
        assert abs(law.deficit_leaf) < 1e-12
        assert (law.r >= 0).all() and (law.r <= 1).all()

    def test_criticality(self, law):
        mean = float(np.dot(np.arange(61), law.p))
        assert abs(mean - 1) < 1e-10

    def test_variance(self, law):
        k = np.arange(61)
        var = float(np.dot(k * k, law.p)) - 1.0
        assert abs(var - SIGMA2) < 1e-8

    def test_root_law(self, law):
        assert law.p_leaf[0] == 0.0
        assert abs(law.p_leaf[1] - P_LEAF1) < 1e-13
        assert abs(law.p_leaf.sum() - 1) < 1e-10

    def test_size_biased(self, law):
        assert abs(law.p_hat.sum() - 1) < 1e-10
        assert abs(law.p_hat_leaf.sum() - 1) < 1e-10
        np.testing.assert_allclose(law.p_hat, np.arange(61) * law.p, rtol=1e-14)

    def test_c_hat(self, law):
        assert abs(law.c_hat - C_HAT) < 1e-12
        assert abs(law.c_hat - 0.80729) < 5e-5

    def test_truncation_field_and_no_warning(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            law = genfun.offspring(40)
        assert law.truncation == 40
        assert abs(law.deficit) < 1e-10

    def test_k_min(self):
        with pytest.raises(ValueError):
            genfun.offspring(39)

    def test_tail_root_value(self, law):
        got = law.p[50] ** (1 / 50.0)
        assert abs(got / P50_ROOT - 1) < 1e-10

    def test_tail_ratio(self, law):
        # consecutive ratio converges to the rate much faster than the
        # k-th root does; the sqrt factor is the k^{-1/2} prefactor
        ref = TAIL_RATE * math.sqrt(50 / 51)
        assert abs(law.p[51] / law.p[50] - ref) < 1e-3

    @pytest.mark.xfail(
        strict=True,
        reason="the k^(-1/2) prefactor of p_k shifts the 50th root to "
        "0.46080, outside the 0.01 window around the limiting rate; the "
        "rate itself is verified in test_tail_ratio",
    )
    def test_tail_root_window(self, law):
        assert abs(law.p[50] ** (1 / 50.0) - 0.4805) < 0.01


class TestMcPolytope:
    def test_n2_convention(self):
        assert genfun.mc_polytope_volume(2, 0, None) == (1.0, 0.0)

    def test_shape_counts(self):
        for m, cat in CATALAN.items():
            assert len(genfun._binary_shapes(m)) == cat

    def test_small_n_estimates(self):
        rng = np.random.default_rng(11)
        for n, ref in ((3, MU_A3), (4, MU_A4), (5, MU_A5)):
            est, err = genfun.mc_polytope_volume(n, 10**5, rng)
            assert err > 0
            assert abs(est - ref) < 3 * err

    def test_n6_estimate(self):
        rng = np.random.default_rng(11)
        est, err = genfun.mc_polytope_volume(6, 10**5, rng)
        assert abs(est - MU_A6) < 4 * err

    def test_reproducible(self):
        a = genfun.mc_polytope_volume(4, 2000, np.random.default_rng(5))
        b = genfun.mc_polytope_volume(4, 2000, np.random.default_rng(5))
        assert a == b

    def test_domain(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            genfun.mc_polytope_volume(1, 10, rng)
        with pytest.raises(ValueError):
            genfun.mc_polytope_volume(9, 10, rng)
        with pytest.raises(ValueError):
            genfun.mc_polytope_volume(3, 0, rng)


class TestTailProbability:
    def test_two_leaves(self):
        assert abs(genfun.tail_probability(math.pi, 2) - 1) < 1e-14
        assert abs(genfun.tail_probability(0.0, 2) - XC_OVER_ZC) < 1e-13

    def test_matches_series_coefficients(self):
        with mp.workdps(40):
            xc = mp.besseljzero(0, 1) * mp.besselj(1, mp.besseljzero(0, 1)) / (2 * mp.pi**2)
            for th in (0.0, 1.0, math.pi / 2, 2.5):
                f = genfun.f_series(th, 50)
                for n in (3, 5, 10, 30, 50):
                    ref = float(xc ** (n - 1) * f[n - 1]) / specfun.big_f(th)
                    got = genfun.tail_probability(th, n)
                    assert abs(got / ref - 1) < 1e-12

    def test_asymptotics(self):
        got = 400**1.5 * genfun.tail_probability(0.0, 400)
        assert abs(got / LIM0 - 1) < 0.05
        got = 400**1.5 * genfun.tail_probability(math.pi / 2, 400)
        assert abs(got / LIM_HALF - 1) < 0.05

    def test_decreasing(self):
        for th in (0.0, math.pi / 2):
            vals = [genfun.tail_probability(th, n) for n in (100, 200, 400, 800)]
            assert all(a > b > 0 for a, b in zip(vals, vals[1:]))

    def test_sums_to_one(self):
        # sum_{n <= N} P_0(|tau| = n) should miss exactly the 2*LIM0/sqrt(N)
        # tail of the n^{-3/2} asymptotics
        zh = genfun._zhat(10**4)
        missing = 1.0 - zh.sum()
        assert abs(missing * math.sqrt(10**4) / (2 * LIM0) - 1) < 0.01

    def test_domain(self):
        with pytest.raises(ValueError):
            genfun.tail_probability(0.0, 1)
        with pytest.raises(ValueError):
            genfun.tail_probability(-0.5, 5)
        with pytest.raises(ValueError):
            genfun.tail_probability(3.2, 5)
