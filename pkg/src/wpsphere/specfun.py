"""Bessel functions J0, J1 and the closed-form constants of the model.

Everything downstream (generating functions, samplers, geometry checks)
funnels through the handful of special values computed here: the first
positive zero c0 of J0, the critical weight x_c, the partition value
Z(x_c) = (c0/2pi)^2, and the one-variable functions

    F(theta)     boundary-condition generating value at criticality
    F_inf(theta) = J0(theta c0 / pi), its "infinite tree" analogue

together with the invariant densities nu, nu_tilde of the spine and
angle processes. Bessel evaluation is done in-house: power series with
extended-precision accumulation up to |x| <= _SEAM, Hankel asymptotic
expansion beyond, the seam placed where the two branches agree to
better than 1e-13.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
import math

import numpy as np

# Power series below, Hankel expansion above. At 14 the long-double
# series still carries ~2e-16 absolute error while the optimally
# truncated asymptotic series is already down to ~3e-15.
_SEAM = 14.0
_SERIES_TERMS = 48


def _series_j0(x2q):
    # sum_k (-q)^k / (k!)^2  with q = x^2/4, long-double accumulation
    q = x2q.astype(np.longdouble)
    term = np.ones_like(q)
    acc = np.ones_like(q)
    for k in range(1, _SERIES_TERMS):
        term = -term * q / np.longdouble(k * k)
        acc += term
    return acc.astype(np.float64)


def _series_j1(x, x2q):
    q = x2q.astype(np.longdouble)
    term = x.astype(np.longdouble) / 2
    acc = term.copy()
    for k in range(1, _SERIES_TERMS):
        term = -term * q / np.longdouble(k * (k + 1))
        acc += term
    return acc.astype(np.float64)


def _hankel(nu, x):
    """Large-argument expansion  sqrt(2/pi x)(P cos chi - Q sin chi).

    The modulus series P, Q are summed with per-element truncation at
    the smallest term (the series are asymptotic, not convergent).
    """
    c = np.ones_like(x)
    P = np.ones_like(x)
    Q = np.zeros_like(x)
    last = np.abs(c)
    active = np.ones(x.shape, dtype=bool)
    fournu2 = 4.0 * nu * nu
    for m in range(34):
        c = c * (fournu2 - (2 * m + 1) ** 2) / (8.0 * (m + 1) * x)
        shrinking = np.abs(c) < last
        active = active & shrinking
        last = np.where(active, np.abs(c), last)
        sgn = -1.0 if ((m + 1) // 2) % 2 else 1.0
        contrib = np.where(active, sgn * c, 0.0)
        if (m + 1) % 2 == 0:
            P += contrib
        else:
            Q += contrib
        if not active.any():
            break
    chi = x - (0.5 * nu + 0.25) * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (np.cos(chi) * P - np.sin(chi) * Q)


def j0(x):
    """Bessel function of the first kind, order 0. Accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    ax = np.abs(np.atleast_1d(x))
    out = np.empty_like(ax)
    small = ax <= _SEAM
    if small.any():
        out[small] = _series_j0(ax[small] ** 2 / 4)
    big = ~small
    if big.any():
        out[big] = _hankel(0, ax[big])
    return out[0] if scalar else out.reshape(x.shape)


def j1(x):
    """Bessel function of the first kind, order 1 (odd in x)."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    xs = np.atleast_1d(x)
    ax = np.abs(xs)
    out = np.empty_like(ax)
    small = ax <= _SEAM
    if small.any():
        out[small] = _series_j1(ax[small], ax[small] ** 2 / 4)
    big = ~small
    if big.any():
        out[big] = _hankel(1, ax[big])
    out = out * np.sign(xs)
    return out[0] if scalar else out.reshape(x.shape)


def find_c0():
    """First positive zero of J0: bisect [2,3] to 1e-14, then one Newton step."""
    lo, hi = 2.0, 3.0
    flo = j0(lo)
    if not (flo > 0 > j0(hi)):
        raise ArithmeticError("j0 does not change sign on [2,3]")
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if j0(mid) > 0:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    c -= j0(c) / (-j1(c))  # J0' = -J1
    return float(c)


# ---------------------------------------------------------------------------
# adaptive Gauss-Kronrod quadrature (7-15 pair)

_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])


def _gk15(f, a, b):
    h = 0.5 * (b - a)
    c = 0.5 * (a + b)
    nodes = np.concatenate((c - h * _XGK[:-1], [c], c + h * _XGK[-2::-1]))
    fv = np.asarray([f(t) for t in nodes], dtype=np.float64)
    wk = np.concatenate((_WGK[:-1], [_WGK[-1]], _WGK[-2::-1]))
    kron = h * float(np.dot(wk, fv))
    # Gauss nodes are the odd-indexed Kronrod nodes
    fg = fv[1:-1:2]
    wg = np.concatenate((_WG[:-1], [_WG[-1]], _WG[-2::-1]))
    gauss = h * float(np.dot(wg, fg))
    return kron, abs(kron - gauss)


def integrate(f, a, b, tol=1e-12, max_depth=48):
    """Adaptive bisection quadrature; absolute tolerance on [a, b]."""
    total = 0.0
    stack = [(float(a), float(b), float(tol), 0)]
    while stack:
        lo, hi, t, depth = stack.pop()
        val, err = _gk15(f, lo, hi)
        if err <= t or depth >= max_depth or hi - lo < 1e-14 * max(1.0, abs(lo)):
            total += val
        else:
            mid = 0.5 * (lo + hi)
            stack.append((lo, mid, t / 2, depth + 1))
            stack.append((mid, hi, t / 2, depth + 1))
    return total


def laplace_j0(t, tol=1e-10):
    """int_0^inf e^{-t x} J0(x) dx, by truncation: the tail beyond X is
    bounded by e^{-tX}/t, pushed below tol/10."""
    if t <= 0:
        raise ValueError("need t > 0")
    X = (math.log(10.0 / (tol * t)) + 2.0) / t
    return integrate(lambda x: math.exp(-t * x) * float(j0(x)), 0.0, X, tol=tol / 10)


# ---------------------------------------------------------------------------
# model functions

_c0_cache = None


def _c0():
    global _c0_cache
    if _c0_cache is None:
        _c0_cache = find_c0()
    return _c0_cache


def s_fun(y):
    """S(y) = sqrt(y) J1(2 pi sqrt(y)) / pi, by its entire power series.

    Series form sum_k (-1)^k pi^{2k} y^{k+1} / (k!(k+1)!) avoids the
    0/0 at y = 0 and keeps full accuracy on the tiny domain [0, Z(x_c)]
    that the model uses.
    """
    y = np.asarray(y, dtype=np.float64)
    scalar = y.ndim == 0
    ys = np.atleast_1d(y).astype(np.longdouble)
    term = ys.copy()
    acc = ys.copy()
    pi2 = np.longdouble(np.pi) ** 2
    for k in range(1, 40):
        term = -term * pi2 * ys / np.longdouble(k * (k + 1))
        acc += term
    out = acc.astype(np.float64)
    return float(out[0]) if scalar else out.reshape(y.shape)


def s_prime(y):
    """d/dy S(y) = J0(2 pi sqrt(y))."""
    y = np.asarray(y, dtype=np.float64)
    return j0(2.0 * np.pi * np.sqrt(y))


def big_f(theta):
    """F(theta): critical boundary generating value, decreasing on [0, pi].

    Equals (sqrt(Z_c)/theta) J1(2 theta sqrt(Z_c)) with Z_c = (c0/2pi)^2;
    evaluated by the series in theta^2 so theta = 0 is exact (value Z_c).
    """
    c0 = _c0()
    zc = (c0 / (2 * np.pi)) ** 2
    th = np.asarray(theta, dtype=np.float64)
    scalar = th.ndim == 0
    t2 = np.atleast_1d(th).astype(np.longdouble) ** 2
    zc_l = np.longdouble(zc)
    term = np.full_like(t2, zc_l)
    acc = term.copy()
    for k in range(1, 36):
        term = -term * t2 * zc_l / np.longdouble(k * (k + 1))
        acc += term
    out = acc.astype(np.float64)
    return float(out[0]) if scalar else out.reshape(th.shape)


def f_inf(theta):
    """F_inf(theta) = J0(theta c0 / pi); F_inf(0) = 1, F_inf(pi) = 0."""
    th = np.asarray(theta, dtype=np.float64)
    return j0(th * (_c0() / np.pi))


def f_inf_prime(theta):
    """d/dtheta F_inf = -(c0/pi) J1(theta c0/pi)."""
    th = np.asarray(theta, dtype=np.float64)
    c = _c0()
    return -(c / np.pi) * j1(th * (c / np.pi))


def big_f_primitive(a):
    """Phi(a) = int_0^a F(theta) dtheta, closed form via Bessel primitives.

    With b = a c0/pi:  Phi(a) = sqrt(Z_c) (int_0^b J0(u) du - J1(b)).
    The J0 primitive is evaluated by its (entire) series; b stays below
    c0 on the domain of use so convergence is immediate.
    """
    c0 = _c0()
    sz = c0 / (2 * np.pi)  # sqrt(Z_c)
    a_arr = np.asarray(a, dtype=np.float64)
    b = a_arr * (c0 / np.pi)
    return sz * (_j0_primitive(b) - j1(b))


def _j0_primitive(b):
    """int_0^b J0(u) du = sum_k (-1)^k (b/2)^{2k} b / ((2k+1)(k!)^2)."""
    b = np.asarray(b, dtype=np.float64)
    scalar = b.ndim == 0
    bb = np.atleast_1d(b).astype(np.longdouble)
    q = bb * bb / 4
    term = bb.copy()
    acc = bb.copy()
    for k in range(1, 40):
        term = -term * q / np.longdouble(k * k)
        acc += term / np.longdouble(2 * k + 1)
    out = acc.astype(np.float64)
    return float(out[0]) if scalar else out.reshape(b.shape)


def nu(theta):
    """Invariant density of the spine angle chain on [0, pi]."""
    th = np.asarray(theta, dtype=np.float64)
    c0 = _c0()
    pref = c0 / (np.pi * abs(math.cos(c0)))
    return pref * j0(th * (c0 / np.pi)) * j1((np.pi - th) * (c0 / np.pi))


def nu_tilde(theta):
    """Stationary density of the continuous-time angle process on [0, pi]."""
    th = np.asarray(theta, dtype=np.float64)
    c0 = _c0()
    pref = c0 / (np.pi * math.sin(c0))
    return pref * j0(th * (c0 / np.pi)) * j0((np.pi - th) * (c0 / np.pi))


@dataclass(frozen=True)
class ConstantsTable:
    c0: float
    x_c: float
    z_xc: float
    q: float
    sigma2: float
    alpha: float
    c_hat: float
    kappa: float
    c1: float
    c2: float
    c3: float
    c4: float
    c_wp: float
    lambda2: float
    cut_density: float
    jump_rate: float
    tail_rate: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def constants():
    """All scaling constants of the model, computed from their formulas."""
    c0 = _c0()
    J1c0 = float(j1(c0))
    J0h = float(j0(c0 / 2))
    J1h = float(j1(c0 / 2))
    cos0 = abs(math.cos(c0))

    x_c = c0 * J1c0 / (2 * np.pi ** 2)
    z_xc = (c0 / (2 * np.pi)) ** 2
    q = c0 * J1h / np.pi ** 2
    sigma2 = 2 * J1c0 * J1h / J0h ** 3
    alpha = J1c0 / (2 * J1h * J0h)
    c_hat = c0 * J0h / (4 * J1h)
    kappa = cos0 / J0h ** 2
    c1 = 2 * cos0 / J1c0
    c2 = 4 * np.pi / math.sqrt(3 * c0)
    c3 = 2 / math.sqrt(sigma2)
    c4 = c2 * alpha ** 0.25
    c_wp = c2 / 2
    lambda2 = 8 * np.pi ** 2 * J1c0 / (3 * c0 * cos0)
    cut_density = J0h ** 2 / cos0
    jump_rate = c0 / (np.pi * abs(math.tan(c0)))
    tail_rate = q / (4 * x_c)
    return ConstantsTable(
        c0=c0, x_c=x_c, z_xc=z_xc, q=q, sigma2=sigma2, alpha=alpha,
        c_hat=c_hat, kappa=kappa, c1=c1, c2=c2, c3=c3, c4=c4, c_wp=c_wp,
        lambda2=lambda2, cut_density=cut_density, jump_rate=jump_rate,
        tail_rate=tail_rate,
    )
