import math

import numpy as np
import pytest
import scipy.special as sp

from wpsphere import specfun as sf

# independent oracle values, frozen from a 30-digit mpmath session
C0 = 2.40482555769577277
X_C = 0.0632476804013394822
Z_XC = 0.146489811747380289
Q = 0.121563176910185986
SIGMA2 = 1.72286479635557336
ALPHA = 0.776628464617309334
C_HAT = 0.807299412883258255
KAPPA = 1.65025610837688709
LAMBDA2 = 7.67124406795218397
CUT = 0.605966549630621959
JUMP = 0.843802623020987209
TAIL = 0.480504487037328078
BESSELCOT = 0.355104095296077001
NU0 = 0.536555446533675103


def gl_nodes(a, b, n=96):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


class TestBessel:
    def test_against_scipy_grid(self):
        x = np.linspace(0.0, 50.0, 2001)
        assert np.max(np.abs(sf.j0(x) - sp.j0(x))) < 1e-12
        assert np.max(np.abs(sf.j1(x) - sp.j1(x))) < 1e-12

    def test_values_at_zero(self):
        assert sf.j0(0.0) == 1.0
        assert sf.j1(0.0) == 0.0

    def test_parity(self):
        x = np.linspace(0.1, 30.0, 57)
        assert np.allclose(sf.j0(-x), sf.j0(x), rtol=0, atol=0)
        assert np.allclose(sf.j1(-x), -sf.j1(x), rtol=0, atol=0)

    def test_near_first_zero(self):
        assert abs(sf.j0(2.40482)) < 1e-5

    def test_seam_agreement(self):
        s = sf._SEAM
        xa = np.array([s])
        assert abs(sf._series_j0(xa ** 2 / 4)[0] - sf._hankel(0, xa)[0]) < 1e-13
        assert abs(sf._series_j1(xa, xa ** 2 / 4)[0] - sf._hankel(1, xa)[0]) < 1e-13

    def test_scalar_and_array_shapes(self):
        assert np.isscalar(float(sf.j0(1.0)))
        out = sf.j0(np.ones((3, 4)))
        assert out.shape == (3, 4)


class TestRoot:
    def test_c0(self):
        c0 = sf.find_c0()
        assert abs(sf.j0(c0)) < 1e-12
        assert abs(c0 - 2.40482) < 1e-5
        assert abs(c0 - C0) < 1e-14

    def test_bracket_signs(self):
        assert sf.j0(2.0) > 0 > sf.j0(3.0)


class TestQuadrature:
    def test_polynomial_exactness(self):
        # 15-point Kronrod rule integrates degree <= 22 exactly
        for k in (0, 3, 10, 17, 22):
            val, err = sf._gk15(lambda t, k=k: t ** k, 0.0, 1.0)
            assert abs(val - 1.0 / (k + 1)) < 1e-14

    def test_weights_consistency(self):
        assert abs(2 * np.sum(sf._WGK[:-1]) + sf._WGK[-1] - 2.0) < 1e-14
        assert abs(2 * np.sum(sf._WG[:-1]) + sf._WG[-1] - 2.0) < 1e-14
        gx, gw = np.polynomial.legendre.leggauss(7)
        assert np.max(np.abs(np.sort(gx)[4:] - sf._XGK[5:0:-2])) < 1e-14

    def test_adaptive_on_peaked_function(self):
        val = sf.integrate(lambda t: 1.0 / (1e-4 + t * t), -1, 1, tol=1e-10)
        exact = 2.0 / 1e-2 * math.atan(1.0 / 1e-2)
        assert abs(val - exact) < 1e-8

    def test_laplace_identity(self):
        for t in (0.5, 1.0, 2.0):
            assert abs(sf.laplace_j0(t) - 1.0 / math.sqrt(1 + t * t)) < 1e-8


class TestSFun:
    def test_at_zero(self):
        assert sf.s_fun(0.0) == 0.0

    def test_fixed_point(self):
        assert abs(sf.s_fun(Z_XC) - X_C) < 1e-14

    def test_derivative_matches_j0(self):
        y = np.linspace(0.0, 0.2, 41)
        assert np.max(np.abs(sf.s_prime(y) - sf.j0(2 * np.pi * np.sqrt(y)))) < 1e-10

    def test_central_difference(self):
        y, h = 0.05, 1e-6
        fd = (sf.s_fun(y + h) - sf.s_fun(y - h)) / (2 * h)
        assert abs(fd - sf.s_prime(y)) < 1e-6

    def test_increasing_below_zc(self):
        y = np.linspace(0.0, Z_XC, 200)
        assert np.all(np.diff(sf.s_fun(y)) > 0)


class TestBigF:
    def test_endpoints(self):
        assert abs(sf.big_f(math.pi) - X_C) < 1e-14
        assert abs(sf.big_f(math.pi / 2) - Q) < 1e-14
        assert abs(sf.big_f(0.0) - Z_XC) < 1e-15

    def test_decreasing(self):
        th = np.linspace(0, math.pi, 500)
        assert np.all(np.diff(sf.big_f(th)) < 0)

    def test_f_inf(self):
        assert sf.f_inf(0.0) == 1.0
        assert abs(sf.f_inf(math.pi)) < 1e-12
        th = np.linspace(0, math.pi, 100)
        assert np.max(np.abs(sf.f_inf(th) - sp.j0(th * C0 / math.pi))) < 1e-13

    def test_primitive_vs_quadrature(self):
        for a in (0.25, 1.0, 2.0, 3.1):
            quad = sf.integrate(lambda t: float(sf.big_f(t)), 0, a, tol=1e-13)
            assert abs(sf.big_f_primitive(a) - quad) < 1e-12


class TestDensities:
    def test_normalization(self):
        for fn in (sf.nu, sf.nu_tilde):
            total = sf.integrate(lambda t: float(fn(t)), 0, math.pi, tol=1e-11)
            assert abs(total - 1.0) < 1e-8

    def test_nonnegative(self):
        th = np.linspace(0, math.pi, 400)
        assert np.min(sf.nu(th)) > -1e-15
        assert np.min(sf.nu_tilde(th)) > -1e-15

    def test_boundary_values(self):
        assert abs(sf.nu(math.pi)) < 1e-12
        assert abs(sf.nu(0.0) - NU0) < 1e-13

    def test_nu_invariance(self):
        # one-step invariance of the spine angle kernel
        #   p(theta -> beta) = 2 F_inf(beta) W(theta, beta) / F_inf(theta)
        # with W the F-mass of admissible alpha
        beta = np.linspace(0.01, math.pi - 0.01, 100)
        resid = []
        for b in beta:
            def integrand(t, b=b):
                w = sf.big_f_primitive(math.pi - b) - sf.big_f_primitive(max(t - b, 0.0))
                return float(sf.nu(t)) * 2.0 * float(sf.f_inf(b)) * w / float(sf.f_inf(t))
            lhs = sf.integrate(integrand, 0, b, tol=5e-10) + sf.integrate(
                integrand, b, math.pi, tol=5e-10)
            resid.append(abs(lhs - float(sf.nu(b))))
        assert max(resid) < 1e-7


class TestIntegralIdentities:
    def test_f_recursion(self):
        # F(theta) = x_c + sum over splits of F x F above theta
        s_grid = np.linspace(0, math.pi, 2049)
        conv = np.empty_like(s_grid)
        for i, s in enumerate(s_grid):
            if s == 0:
                conv[i] = 0.0
                continue
            xn, wn = gl_nodes(0.0, s, 48)
            conv[i] = float(np.dot(wn, sf.big_f(xn) * sf.big_f(s - xn)))
        # cumulative integral of conv from theta to pi (Simpson on the grid)
        from scipy.integrate import cumulative_simpson
        cum = cumulative_simpson(conv, x=s_grid, initial=0.0)
        tail = cum[-1] - cum
        theta = np.linspace(0, math.pi, 50)
        idx = np.searchsorted(s_grid, theta)
        idx = np.clip(idx, 0, len(s_grid) - 1)
        resid = np.abs(sf.big_f(s_grid[idx]) - X_C - tail[idx])
        assert np.max(resid) < 1e-6

    def test_f_inf_consistency(self):
        s_grid = np.linspace(0, math.pi, 2049)
        conv = np.empty_like(s_grid)
        for i, s in enumerate(s_grid):
            if s == 0:
                conv[i] = 0.0
                continue
            xn, wn = gl_nodes(0.0, s, 48)
            conv[i] = float(np.dot(wn, 2.0 * sf.big_f(xn) * sf.f_inf(s - xn)))
        from scipy.integrate import cumulative_simpson
        cum = cumulative_simpson(conv, x=s_grid, initial=0.0)
        tail = cum[-1] - cum
        theta = np.linspace(0, math.pi, 50)
        idx = np.clip(np.searchsorted(s_grid, theta), 0, len(s_grid) - 1)
        resid = np.abs(sf.f_inf(s_grid[idx]) - tail[idx])
        assert np.max(resid) < 1e-6

    def test_bessel_cot_integral(self):
        def inner(theta):
            xn, wn = gl_nodes(0.0, theta, 96)
            fi = sf.f_inf
            bracket = fi(theta) * fi(math.pi - theta - xn) - fi(math.pi - theta) * fi(theta - xn)
            vals = (1.0 / math.tan(theta)) * (np.cos(xn) / np.sin(xn)) * fi(xn) * bracket
            return float(np.dot(wn, vals))

        xo, wo = gl_nodes(0.0, math.pi / 2, 96)
        total = float(np.dot(wo, [inner(t) for t in xo]))
        target = math.pi ** 2 * sp.j1(C0) / (6 * C0)
        assert abs(total - target) / abs(target) < 1e-6
        assert abs(target - BESSELCOT) < 1e-12


class TestConstants:
    def test_table_values(self):
        c = sf.constants()
        assert abs(c.c0 - C0) < 1e-14
        assert abs(c.x_c - X_C) < 1e-15
        assert abs(c.z_xc - Z_XC) < 1e-15
        assert abs(c.q - Q) < 1e-15
        assert abs(c.sigma2 - SIGMA2) < 1e-13
        assert abs(c.alpha - ALPHA) < 1e-13
        assert abs(c.c_hat - C_HAT) < 1e-13
        assert abs(c.kappa - KAPPA) < 1e-13
        assert abs(c.lambda2 - LAMBDA2) < 1e-12
        assert abs(c.cut_density - CUT) < 1e-13
        assert abs(c.jump_rate - JUMP) < 1e-13
        assert abs(c.tail_rate - TAIL) < 1e-13

    def test_internal_relations(self):
        c = sf.constants()
        assert c.c_wp == c.c2 / 2
        assert abs(c.c1 - c.kappa * c.c3 / math.sqrt(c.alpha)) < 1e-12
        rho2 = c.lambda2 / c.cut_density
        assert abs(c.c4 - math.sqrt(rho2) * math.sqrt(c.c3)) < 1e-12
        assert abs(c.c4 - c.c2 * c.alpha ** 0.25) < 1e-12
        assert abs(c.kappa * c.cut_density - 1.0) < 1e-13
        assert abs(c.tail_rate - c.q / (4 * c.x_c)) < 1e-15

    def test_c0_interval(self):
        c = sf.constants()
        assert 2.0 < c.c0 < 3.0
