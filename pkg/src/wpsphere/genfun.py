"""Exact enumeration: volume coefficients, tree series, offspring laws.

The measure assigned to binary trees with n leaves is a sum of polytope
volumes, one polytope per plane tree shape, cut out of (0,pi)^(2n-4) by
the corner constraints.  Everything in this module is a way of getting
at those volumes and at the laws they induce:

  * zograf_a / wp_volume   exact rational recursion for the coefficients
                           a_n and the Weil-Petersson volumes V_{0,n};
  * z_series / f_series    the generating series Z(x) = sum mu(A_n) x^(n-1)
                           and its angle-constrained refinement F(x; theta),
                           obtained by power-series reversion of the map
                           S(y) = sqrt(y) J1(2 pi sqrt(y)) / pi;
  * blob_weights/offspring the weights of irreducible components ("blobs")
                           in the Delaunay-type decomposition of a tree,
                           and the critical branching law p, the red-leaf
                           probabilities r, and the root and size-biased
                           variants built from them;
  * mc_polytope_volume     direct Monte Carlo on the defining polytopes,
                           kept deliberately independent of the series
                           machinery so the two can cross-check;
  * tail_probability       P_theta(|tau| = n) from series coefficients,
                           via a normalized quadratic recursion that is
                           stable in float64 out to n in the thousands.

Series arithmetic runs at 60 significant digits (mpmath).  Coefficients
grow like x_c^(-n), so ~40 digits survive at order 60; identities are
tested far below that.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath as mp
import numpy as np

from . import specfun

_DPS = 60


def _ctx():
    return mp.workdps(_DPS)


@lru_cache(maxsize=1)
def _mp_consts():
    with _ctx():
        c0 = mp.besseljzero(0, 1)
        pi2 = mp.pi ** 2
        x_c = c0 * mp.besselj(1, c0) / (2 * pi2)
        z_c = (c0 / (2 * mp.pi)) ** 2
        q = c0 * mp.besselj(1, c0 / 2) / pi2
        return c0, x_c, z_c, q


# ---------------------------------------------------------------------------
# Zograf's recursion for the volume coefficients a_n, kept over exact
# rationals.  a_3 = 1 and V_{0,n} = (2 pi^2)^(n-3) a_n / (n-3)!.

_A_CACHE = [None, None, None, Fraction(1)]


def zograf_a(n: int) -> Fraction:
    """Exact coefficient a_n of the genus-0 volume recursion, n >= 3."""
    if n < 3:
        raise ValueError(f"a_n is defined for n >= 3, got n={n}")
    while len(_A_CACHE) <= n:
        m = len(_A_CACHE)
        total = Fraction(0)
        for k in range(1, m - 2):
            total += (
                Fraction(k * (m - k - 2), m - 1)
                * math.comb(m - 4, k - 1)
                * math.comb(m, k + 1)
                * _A_CACHE[k + 2]
                * _A_CACHE[m - k]
            )
        _A_CACHE.append(total / 2)
    return _A_CACHE[n]


def wp_volume(genus: int, n: int) -> mp.mpf:
    """Weil-Petersson volume V_{g,n} of the moduli space of n-punctured
    genus-g hyperbolic surfaces.  Only genus 0 is supported here."""
    if genus != 0:
        raise NotImplementedError("only genus 0 volumes are implemented")
    a = zograf_a(n)  # validates n >= 3
    with _ctx():
        vol = (2 * mp.pi ** 2) ** (n - 3) / mp.factorial(n - 3)
        return vol * mp.mpf(a.numerator) / a.denominator


# ---------------------------------------------------------------------------
# Truncated power series over mpmath floats.

class PowerSeries:
    """Power series truncated at a fixed order, mpmath coefficients.

    coeffs[m] is the degree-m coefficient.  Binary operations truncate
    to the smaller operand order, so results are exact to their stated
    truncation whenever the operands are.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        self.coeffs = list(coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, m: int):
        return self.coeffs[m]

    def __add__(self, other):
        n = min(self.order, other.order)
        return PowerSeries([self.coeffs[m] + other.coeffs[m] for m in range(n + 1)])

    def __sub__(self, other):
        n = min(self.order, other.order)
        return PowerSeries([self.coeffs[m] - other.coeffs[m] for m in range(n + 1)])

    def __mul__(self, other):
        n = min(self.order, other.order)
        with _ctx():
            out = [mp.mpf(0)] * (n + 1)
            for i, ci in enumerate(self.coeffs[: n + 1]):
                if ci == 0:
                    continue
                for j in range(0, n + 1 - i):
                    out[i + j] += ci * other.coeffs[j]
        return PowerSeries(out)

    def scale(self, c):
        with _ctx():
            c = mp.mpf(c)
            return PowerSeries([c * a for a in self.coeffs])

    def scale_arg(self, c):
        """Series of x -> f(c x)."""
        with _ctx():
            c = mp.mpf(c)
            out, pw = [], mp.mpf(1)
            for a in self.coeffs:
                out.append(a * pw)
                pw *= c
        return PowerSeries(out)

    def derivative(self):
        with _ctx():
            return PowerSeries(
                [(m + 1) * self.coeffs[m + 1] for m in range(self.order)]
            )

    def compose(self, inner: "PowerSeries") -> "PowerSeries":
        """self(inner(x)); requires inner(0) = 0."""
        if inner.coeffs[0] != 0:
            raise ValueError("composition needs a series with zero constant term")
        n = inner.order
        with _ctx():
            res = PowerSeries([mp.mpf(0)] * (n + 1))
            res.coeffs[0] = mp.mpf(self.coeffs[-1])
            for c in reversed(self.coeffs[:-1]):
                res = res * inner
                res.coeffs[0] += c
        return res

    def reciprocal(self) -> "PowerSeries":
        """Series of 1/self; requires a nonzero constant term."""
        if self.coeffs[0] == 0:
            raise ZeroDivisionError("reciprocal of a series vanishing at 0")
        n = self.order
        with _ctx():
            inv0 = 1 / self.coeffs[0]
            out = [inv0]
            for m in range(1, n + 1):
                acc = mp.mpf(0)
                for i in range(1, m + 1):
                    acc += self.coeffs[i] * out[m - i]
                out.append(-acc * inv0)
        return PowerSeries(out)

    def evaluate(self, x):
        with _ctx():
            x = mp.mpf(x)
            acc = mp.mpf(0)
            for c in reversed(self.coeffs):
                acc = acc * x + c
        return acc


def _s_coeffs(theta, n):
    # S_theta(y) = sum_{j>=1} (-1)^(j-1) theta^(2(j-1)) / ((j-1)! j!) * y^j;
    # at theta = pi this is the series of S(y) = sqrt(y) J1(2 pi sqrt(y)) / pi.
    with _ctx():
        t2 = mp.mpf(theta) ** 2
        coeffs = [mp.mpf(0)] * (n + 1)
        c = mp.mpf(1)
        for j in range(1, n + 1):
            coeffs[j] = c
            c = -c * t2 / (j * (j + 1))
    return PowerSeries(coeffs)


def _check_theta(theta):
    # accepts mpf input so callers can pass mp.pi for the exact endpoint
    with _ctx():
        t = mp.mpf(theta)
        if t < 0 or t > mp.pi:
            raise ValueError("theta must lie in [0, pi]")
    return t


def s_series(theta, n: int) -> PowerSeries:
    """Series in y of S_theta(y) = sqrt(y) J1(2 theta sqrt(y)) / theta."""
    return _s_coeffs(_check_theta(theta), n)


# The reversion Z of S (so S(Z(x)) = x) is solved order by order.  The
# coefficient z_m enters [x^m] S(Z) only through the linear term of S,
# because Z has no constant term; everything else is triangular in the
# earlier coefficients.  The powers Z^j accumulated along the way are
# cached since f_series and the blob weights reuse them.

_Z_CACHE: dict[int, tuple[PowerSeries, list]] = {}


def _z_data(n: int):
    if n in _Z_CACHE:
        return _Z_CACHE[n]
    with _ctx():
        s = _s_coeffs(mp.pi, n)
        zero = mp.mpf(0)
        z = [zero] * (n + 1)
        z[1] = mp.mpf(1)
        # powers[j][m] = [x^m] Z(x)^j, filled for m <= current order
        powers = [None] + [[zero] * (n + 1) for _ in range(n)]
        if n >= 1:
            powers[1][1] = z[1]
        for m in range(2, n + 1):
            for j in range(2, m + 1):
                acc = zero
                prev = powers[j - 1]
                for i in range(j - 1, m):
                    if prev[i] != 0:
                        acc += prev[i] * z[m - i]
                powers[j][m] = acc
            acc = zero
            for j in range(2, m + 1):
                acc += s.coeffs[j] * powers[j][m]
            z[m] = -acc
            powers[1][m] = z[m]
    data = (PowerSeries(z), powers)
    _Z_CACHE[n] = data
    return data


def z_series(n: int) -> PowerSeries:
    """Series of Z(x) = sum_{k>=2} mu(A_k) x^(k-1) through order n,
    computed by reverting S(Z(x)) = x coefficient by coefficient."""
    if n < 1:
        raise ValueError("need at least order 1")
    return PowerSeries(list(_z_data(n)[0].coeffs))


def f_series(theta, n: int) -> PowerSeries:
    """Series of F(x; theta) = S_theta(Z(x)) through order n.

    F(x; pi) = x and F(x; 0) = Z(x); in between, [x^(k-1)] F is the
    measure of trees with k leaves whose root corners leave an opening
    of at least theta.
    """
    theta = _check_theta(theta)
    if n < 1:
        raise ValueError("need at least order 1")
    _, powers = _z_data(n)
    st = _s_coeffs(theta, n)
    with _ctx():
        coeffs = [mp.mpf(0)] * (n + 1)
        for m in range(1, n + 1):
            acc = mp.mpf(0)
            for j in range(1, m + 1):
                acc += st.coeffs[j] * powers[j][m]
            coeffs[m] = acc
    return PowerSeries(coeffs)


# ---------------------------------------------------------------------------
# Blob weights.  A blob of degree k is an irreducible piece of the
# decomposition along edges that are locally Delaunay-stable; its total
# weight B_k (no marked leaf) or B_leaf_k (one marked leaf) is read off
# the two-variable series B_x(z) = z + Z'(z/4) (x - S(4 Z(z/4))).

@lru_cache(maxsize=8)
def _blob_mpf(k_max: int):
    n = max(k_max, 2)
    zfull = z_series(n + 1)
    with _ctx():
        quarter = mp.mpf(1) / 4
        y = PowerSeries(
            [4 * zfull.coeffs[m] * quarter ** m for m in range(n + 1)]
        )  # 4 Z(z/4)
        deriv = PowerSeries(
            [(m + 1) * zfull.coeffs[m + 1] * quarter ** m for m in range(n + 1)]
        )  # Z'(z/4)
        s_of_y = _s_coeffs(mp.pi, n).compose(y)
        ident = PowerSeries([mp.mpf(0), mp.mpf(1)] + [mp.mpf(0)] * (n - 1))
        part0 = ident - deriv * s_of_y  # [x^0] B_x(z)
        b = [mp.mpf(0)] * (k_max + 1)
        b_leaf = [mp.mpf(0)] * (k_max + 1)
        for k in range(1, k_max + 1):
            b[k] = part0.coeffs[k - 1]
            b_leaf[k] = deriv.coeffs[k - 1]
    return b, b_leaf


def blob_weights(k_max: int):
    """Arrays (B, B_leaf) with B[k] the weight of degree-k blobs without
    a marked leaf and B_leaf[k] with one, for 1 <= k <= k_max.  Index 0
    is unused and set to zero.  B[1] = B[2] = 0 and B_leaf[1] = 1."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    b, b_leaf = _blob_mpf(k_max)
    return (
        np.array([float(v) for v in b]),
        np.array([float(v) for v in b_leaf]),
    )


@dataclass(frozen=True)
class OffspringLaw:
    """Critical branching law of the blob tree and its derived laws.

    p[k] is the probability that a blob vertex has k children, r[k] the
    probability that such a vertex carries a marked leaf, p_leaf the law
    of the root vertex, and p_hat / p_hat_leaf the size-biased variants
    (p_hat[k] = k p[k]; p_hat_leaf[k] = c_hat k p_leaf[k]).  Arrays are
    truncated at k = truncation; deficit and deficit_leaf report the
    mass lost to truncation.
    """

    p: np.ndarray
    r: np.ndarray
    p_leaf: np.ndarray
    p_hat: np.ndarray
    p_hat_leaf: np.ndarray
    truncation: int
    deficit: float
    deficit_leaf: float
    c_hat: float


def offspring(k_max: int = 60) -> OffspringLaw:
    """Offspring law p_k = (B_{k+1} + x_c B_leaf_{k+1}) q^(k-1) and friends,
    truncated at k_max (>= 40 so the geometric tail is below 1e-10)."""
    if k_max < 40:
        raise ValueError("k_max must be >= 40")
    b, b_leaf = _blob_mpf(k_max + 1)
    _, x_c, z_c, q = _mp_consts()
    with _ctx():
        p = [mp.mpf(0)] * (k_max + 1)
        r = [mp.mpf(0)] * (k_max + 1)
        p_leaf = [mp.mpf(0)] * (k_max + 1)
        qpow = 1 / q  # q^(k-1) at k = 0
        for k in range(k_max + 1):
            marked = x_c * b_leaf[k + 1] * qpow
            p[k] = b[k + 1] * qpow + marked
            r[k] = marked / p[k] if p[k] > 0 else mp.mpf(0)
            qpow *= q
        qpow = q
        for k in range(1, k_max + 1):
            p_leaf[k] = b_leaf[k] * qpow / (k * z_c)
            qpow *= q
        mean_leaf = sum(k * p_leaf[k] for k in range(1, k_max + 1))
        c_hat = 1 / mean_leaf
        deficit = 1 - sum(p)
        deficit_leaf = 1 - sum(p_leaf)
        p_hat = [k * p[k] for k in range(k_max + 1)]
        p_hat_leaf = [c_hat * k * p_leaf[k] for k in range(k_max + 1)]
    law = OffspringLaw(
        p=np.array([float(v) for v in p]),
        r=np.array([float(v) for v in r]),
        p_leaf=np.array([float(v) for v in p_leaf]),
        p_hat=np.array([float(v) for v in p_hat]),
        p_hat_leaf=np.array([float(v) for v in p_hat_leaf]),
        truncation=k_max,
        deficit=float(deficit),
        deficit_leaf=float(deficit_leaf),
        c_hat=float(c_hat),
    )
    if max(abs(law.deficit), abs(law.deficit_leaf)) > 1e-10:
        warnings.warn(
            f"offspring truncation at k_max={k_max} leaves tail mass "
            f"{max(abs(law.deficit), abs(law.deficit_leaf)):.3e}",
            stacklevel=2,
        )
    return law


# ---------------------------------------------------------------------------
# Direct Monte Carlo on the angle polytopes.

@lru_cache(maxsize=None)
def _binary_shapes(m: int):
    """All plane binary tree shapes with m cubic vertices (Catalan(m) of
    them), as nested pairs with None for a leaf."""
    if m == 0:
        return (None,)
    out = []
    for i in range(m):
        for left in _binary_shapes(i):
            for right in _binary_shapes(m - 1 - i):
                out.append((left, right))
    return tuple(out)


def _shape_constraints(shape):
    """Preorder-index the cubic vertices; return (count, [(i, j, is_left)])
    with one triple per non-root cubic vertex i of parent j."""
    cons = []
    counter = 0
    stack = [(shape, -1, False)]
    while stack:
        node, parent, is_left = stack.pop()
        if node is None:
            continue
        i = counter
        counter += 1
        if parent >= 0:
            cons.append((i, parent, is_left))
        left, right = node
        stack.append((right, i, False))
        stack.append((left, i, True))
    return counter, cons


def mc_polytope_volume(n: int, samples: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate (value, stderr) of mu(A_n), the total volume
    of the corner-constraint polytopes over all tree shapes with n
    leaves.  Each shape gets `samples` uniform draws from (0, pi)^(2n-4).
    n = 2 returns (1, 0) by convention without sampling."""
    if not 2 <= n <= 8:
        raise ValueError("n must lie in [2, 8]")
    if n == 2:
        return 1.0, 0.0
    if samples < 1:
        raise ValueError("samples must be positive")
    m = n - 2
    cell = math.pi ** (2 * m)
    total = 0.0
    var = 0.0
    for shape in _binary_shapes(m):
        nverts, cons = _shape_constraints(shape)
        hits = 0
        left = samples
        while left > 0:
            chunk = min(left, 200_000)
            u = rng.random((chunk, 2 * m)) * math.pi
            alpha = u[:, 0::2]
            beta = u[:, 1::2]
            s = alpha + beta
            ok = (s > math.pi).all(axis=1)
            for i, j, is_left in cons:
                bound = (beta[:, j] if is_left else alpha[:, j]) + math.pi
                ok &= s[:, i] < bound
            hits += int(ok.sum())
            left -= chunk
        frac = hits / samples
        total += cell * frac
        var += cell * cell * frac * (1.0 - frac) / samples
    return total, math.sqrt(var)


# ---------------------------------------------------------------------------
# Size distribution of the Boltzmann tree.  Substituting x = x_c u and
# normalizing by Z(x_c) turns the coefficient recursion for Z into one
# for zhat_m = P_0(|tau| = m + 1), whose values live in (0, 1) and are
# therefore safe in float64 far beyond the reach of the raw coefficients.

_zhat_store = np.zeros(0)
_zhat_filled = 0  # largest m with zhat_m already computed


def _zhat(m_max: int) -> np.ndarray:
    global _zhat_store, _zhat_filled
    if len(_zhat_store) <= m_max:
        grown = np.zeros(m_max + 1)
        grown[: len(_zhat_store)] = _zhat_store
        _zhat_store = grown
    zh = _zhat_store
    cons = specfun.constants()
    if _zhat_filled < 1:
        zh[1] = cons.x_c / cons.z_xc
        _zhat_filled = 1
    amp = 0.5 * math.pi ** 2 * cons.z_xc
    for m in range(_zhat_filled + 1, m_max + 1):
        idx = np.arange(1, m)
        g = idx * zh[1:m] / (idx + 1.0)
        zh[m] = amp * (m + 2.0) / (m - 1.0) * float(np.dot(g, g[::-1]))
    _zhat_filled = max(_zhat_filled, m_max)
    return zh[: m_max + 1]


def tail_probability(theta, n: int) -> float:
    """P_theta(|tau| = n): the chance that the Boltzmann tree grown from
    a boundary opening theta has exactly n leaves.  Equals
    x_c^(n-1) [x^(n-1)] F(x; theta) / F(x_c; theta), evaluated through
    the normalized coefficient recursion."""
    if n < 2:
        raise ValueError("a tree has at least 2 leaves")
    theta = float(theta)
    if not 0 <= theta <= math.pi:
        raise ValueError("theta must lie in [0, pi]")
    cons = specfun.constants()
    m = n - 1
    zh = _zhat(m)
    den = specfun.big_f(theta)
    pw = zh.copy()  # coefficients of Zhat^(j+1), starting at j = 0
    t2 = float(theta) * float(theta)
    c = cons.z_xc  # Z_c^(j+1) (-theta^2)^j / (j! (j+1)!) at j = 0
    num = 0.0
    for j in range(80):
        num += c * pw[m]
        c_next = -c * t2 * cons.z_xc / ((j + 1) * (j + 2))
        # coefficients of the probability-vector powers are <= 1
        if abs(c_next) < 1e-22 * den:
            break
        pw = np.convolve(pw, zh)[: m + 1]
        c = c_next
    return num / den
