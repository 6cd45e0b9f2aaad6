"""Compiled engine for exact-size tree sampling.

The rejection sampler discards almost every trial it grows, so the hot
path is organized to make discarded work as cheap as possible:

* trials are processed in batches, breadth first: one "wave" holds the
  pending edges of every live trial in the batch, and each wave is a
  handful of tight branch-light loops instead of a per-node recursion;
* randomness is counter based: draw j of trial t is a hash of (t, j),
  so any single trial can be replayed later without rerunning, or even
  storing, the rest of the batch.  The first pass therefore logs
  nothing at all; it just reports which trials finished at a wanted
  size.  Winners are then re-run one by one through the same wave code
  (a batch of size one follows the identical per-trial draw sequence)
  with logging switched on, and only those logs are turned into trees;
* the weight F is a 16-term even polynomial (exact to a few ulps), but
  the hot loops only touch piecewise-linear lower/upper bounds on it
  (256 intervals in theta^2, all four tables L1-resident); the
  polynomial itself decides the rare draws that land between the
  bounds, so every accept/reject decision is still exact.

Uniforms are 32-bit, mapped to (k + 0.5) / 2^32.  That keeps them
strictly inside (0, 1), which removes all boundary guards: a split can
never produce an angle of exactly 0, and a proposal can never land
exactly on theta or pi.  The quantization biases each split acceptance
by less than 2^-31 relative, tilting the law of an n-leaf tree by under
n * 2^-31; at n = 10^4 that is 5e-6, far below every statistical
tolerance used downstream.

The hash is two rounds of the splitmix64 finalizer over the packed
counter (trial << 24) + j, with two seed words from the caller's
Generator mixed in between.  Every edge reserves an aligned pair of
draw indices at birth: j for its leaf decision and j + 1 for its first
split proposal, so neither consumes the trial counter; later proposal
rounds draw fresh pairs from it.  Draw indices stay below 2^24 because
a trial consumes at most a few times its node budget (sizes up to
about 10^6 fit); a trial whose index would overflow is killed (never
observed, it would take on the order of a million rejection rounds on
a single edge).
"""

import math

import numpy as np
from numba import njit, uint8, uint64, float64, int64

from . import specfun

_PI = math.pi

_N_COEF = 16
_N_BOUND = 256

_MIX1 = uint64(0xBF58476D1CE4E5B9)
_MIX2 = uint64(0x94D049BB133111EB)
_GOLD = uint64(0x9E3779B97F4A7C15)
_LOW32 = uint64(0xFFFFFFFF)
_INV32 = 1.0 / 4294967296.0
_K_CAP = 1 << 24


def _poly_coefs():
    tab = specfun.constants()
    zc = tab.z_xc
    c = np.empty(_N_COEF)
    for k in range(_N_COEF):
        c[k] = (-1.0) ** k * zc ** (k + 1) / (
            math.factorial(k) * math.factorial(k + 1)
        )
    return c


def _poly_coefs_inf():
    """Taylor coefficients of F_inf(theta) = J0(theta c0 / pi) in
    theta^2; term 16 is below 1e-22 of the value on [0, pi]."""
    tab = specfun.constants()
    r = tab.c0 / (2.0 * math.pi)
    c = np.empty(_N_COEF)
    for k in range(_N_COEF):
        c[k] = (-1.0) ** k * r ** (2 * k) / math.factorial(k) ** 2
    return c


def _poly_eval(coef, t2):
    acc = np.full_like(np.asarray(t2, dtype=float), coef[-1])
    for k in range(_N_COEF - 2, -1, -1):
        acc = acc * t2 + coef[k]
    return acc


def _bound_tables(coef):
    """Linear minorant/majorant of F per interval of t = theta^2.

    Soundness is enforced numerically: each line is shifted until it
    clears a 65-point refinement of its interval with a 1e-9 margin,
    which dwarfs the refinement gap and every rounding effect.

    The tables carry one guard entry: t * (N/pi^2) can round up to
    exactly N when t is within an ulp of pi^2, and the last interval's
    lines are still valid bounds there."""
    t_hi = _PI * _PI
    lo_s = np.empty(_N_BOUND + 1)
    lo_c = np.empty(_N_BOUND + 1)
    up_s = np.empty(_N_BOUND + 1)
    up_c = np.empty(_N_BOUND + 1)
    edges = np.linspace(0.0, t_hi, _N_BOUND + 1)
    for i in range(_N_BOUND):
        t0, t1 = edges[i], edges[i + 1]
        fine = np.linspace(t0, t1, 65)
        h = _poly_eval(coef, fine)
        s = (h[-1] - h[0]) / (t1 - t0)
        c = h[0] - s * t0
        gap = (h - (s * fine + c)).max()
        up_s[i] = s
        up_c[i] = c + max(gap, 0.0) + 1e-9
        sm = (h[33] - h[31]) / (fine[33] - fine[31])
        cm = h[32] - sm * fine[32]
        gap = ((sm * fine + cm) - h).max()
        lo_s[i] = sm
        lo_c[i] = cm - max(gap, 0.0) - 1e-9
    lo_s[_N_BOUND] = lo_s[_N_BOUND - 1]
    lo_c[_N_BOUND] = lo_c[_N_BOUND - 1]
    up_s[_N_BOUND] = up_s[_N_BOUND - 1]
    up_c[_N_BOUND] = up_c[_N_BOUND - 1]
    return lo_s, lo_c, up_s, up_c


_COEF = _poly_coefs()
_ICOEF = _poly_coefs_inf()
_LO_S, _LO_C, _UP_S, _UP_C = _bound_tables(_COEF)
_TAB = specfun.constants()
_X_C = _TAB.x_c
_Z_C = _TAB.z_xc


@njit(inline="always")
def _hash2(seed1, seed2, trial, j):
    z = (trial << uint64(24)) + j
    z = (z ^ seed1) + _GOLD
    z = (z ^ (z >> uint64(30))) * _MIX1
    z = (z ^ (z >> uint64(27))) * _MIX2
    z = z ^ (z >> uint64(31))
    z = z ^ seed2
    z = (z ^ (z >> uint64(30))) * _MIX1
    z = (z ^ (z >> uint64(27))) * _MIX2
    return z ^ (z >> uint64(31))


@njit(cache=True)
def run_batch(seed1, seed2, trial_base, bsize, targets,
              coef, lo_s, lo_c, up_s, up_c, x_c, z_c,
              th2_cur, tid_cur, kk_cur, th2_nxt, tid_nxt, kk_nxt,
              u1_slot, kind, aw, bw, splits, todo,
              leaf_cnt, pend, dead, kctr,
              win_trial, win_size,
              log_mode, log_kind, log_a, log_b, log_wlen):
    """Run bsize trials (global ids trial_base .. trial_base+bsize-1).

    Every trial that finishes at one of the (ascending) target sizes is
    recorded in win_trial/win_size in finish order; the caller re-sorts
    by trial id so that selection never depends on tree content.  With
    log_mode == 1 (meant for bsize == 1) each wave's per-edge records
    are appended to log_kind/log_a/log_b, wave lengths to log_wlen.

    Returns (winners, waves, frontier entries); entries is -1 when a
    scratch array would overflow, and the caller must retry the same
    trial range with bigger scratch.
    """
    nmax = targets[targets.shape[0] - 1]
    cap = nmax - 1
    zc2 = z_c * z_c
    pi2 = np.pi * np.pi
    scale = _N_BOUND / pi2
    kcn = coef.shape[0]
    cap_f = th2_cur.shape[0]
    cap_log = log_kind.shape[0]

    for t in range(bsize):
        leaf_cnt[t] = 0
        pend[t] = 1
        dead[t] = 0
        kctr[t] = 2
    w_sz = bsize
    for i in range(bsize):
        th2_cur[i] = 0.0
        tid_cur[i] = i
        kk_cur[i] = 0
    nwin = 0
    nwave = 0
    entries = 0
    lg = 0

    while w_sz > 0:
        entries += w_sz

        # 1) per-edge draw: leaf decision, u1 stashed for the first
        #    split round, split slots compacted into `splits`
        n_split = 0
        for i in range(w_sz):
            t = tid_cur[i]
            h = _hash2(seed1, seed2, uint64(trial_base + t),
                       uint64(kk_cur[i]))
            ul = (float64(h >> uint64(32)) + 0.5) * _INV32
            u1_slot[i] = (float64(h & _LOW32) + 0.5) * _INV32
            t2v = th2_cur[i]
            it = int64(t2v * scale)
            wu = ul * (up_s[it] * t2v + up_c[it])
            wl = ul * (lo_s[it] * t2v + lo_c[it])
            lf = wu < x_c
            if (wl < x_c) != lf:
                f1 = coef[kcn - 1]
                for j in range(kcn - 2, -1, -1):
                    f1 = f1 * t2v + coef[j]
                lf = ul * f1 < x_c
            kind[i] = uint8(1) - uint8(lf)
            splits[n_split] = i
            n_split += int64(1) - int64(lf)

        # 2) split proposals, first round: u1 from the entry hash plus
        #    one hash for (u2, u3) at the reserved partner index
        n_todo = 0
        for ii in range(n_split):
            i = splits[ii]
            t = tid_cur[i]
            h = _hash2(seed1, seed2, uint64(trial_base + t),
                       uint64(kk_cur[i] + 1))
            u2 = (float64(h >> uint64(32)) + 0.5) * _INV32
            u3 = (float64(h & _LOW32) + 0.5) * _INV32
            t2v = th2_cur[i]
            s = math.sqrt(t2v + u1_slot[i] * (pi2 - t2v))
            a = u2 * s
            b = s - a
            ta = a * a
            tb = b * b
            ia = int64(ta * scale)
            ib = int64(tb * scale)
            w = u3 * zc2
            flo = (lo_s[ia] * ta + lo_c[ia]) * (lo_s[ib] * tb + lo_c[ib])
            fup = (up_s[ia] * ta + up_c[ia]) * (up_s[ib] * tb + up_c[ib])
            ok = w < flo
            if (w < fup) != ok:
                f1 = coef[kcn - 1]
                f2 = coef[kcn - 1]
                for j in range(kcn - 2, -1, -1):
                    f1 = f1 * ta + coef[j]
                    f2 = f2 * tb + coef[j]
                ok = w < f1 * f2
            aw[i] = a
            bw[i] = b
            todo[n_todo] = i
            n_todo += int64(1) - int64(ok)

        # 3) later rounds on the shrinking rejected set, two hashes each
        while n_todo > 0:
            n_rej = 0
            for ii in range(n_todo):
                i = todo[ii]
                t = tid_cur[i]
                k = kctr[t]
                if k + 2 >= _K_CAP:
                    dead[t] = 1
                    continue
                kctr[t] = k + 2
                ha = _hash2(seed1, seed2, uint64(trial_base + t), uint64(k))
                hb = _hash2(seed1, seed2, uint64(trial_base + t),
                            uint64(k + 1))
                u1 = (float64(ha >> uint64(32)) + 0.5) * _INV32
                u2 = (float64(ha & _LOW32) + 0.5) * _INV32
                u3 = (float64(hb >> uint64(32)) + 0.5) * _INV32
                t2v = th2_cur[i]
                s = math.sqrt(t2v + u1 * (pi2 - t2v))
                a = u2 * s
                b = s - a
                ta = a * a
                tb = b * b
                ia = int64(ta * scale)
                ib = int64(tb * scale)
                w = u3 * zc2
                flo = (lo_s[ia] * ta + lo_c[ia]) * (lo_s[ib] * tb + lo_c[ib])
                fup = (up_s[ia] * ta + up_c[ia]) * (up_s[ib] * tb + up_c[ib])
                ok = w < flo
                if (w < fup) != ok:
                    f1 = coef[kcn - 1]
                    f2 = coef[kcn - 1]
                    for j in range(kcn - 2, -1, -1):
                        f1 = f1 * ta + coef[j]
                        f2 = f2 * tb + coef[j]
                    ok = w < f1 * f2
                aw[i] = a
                bw[i] = b
                todo[n_rej] = i
                n_rej += int64(1) - int64(ok)
            n_todo = n_rej

        # 4) logging (single-trial replays only)
        if log_mode == 1:
            if lg + w_sz > cap_log:
                return nwin, nwave, -1
            for i in range(w_sz):
                if kind[i] == 0:
                    log_kind[lg] = 0
                    log_a[lg] = np.nan
                    log_b[lg] = np.nan
                else:
                    log_kind[lg] = 1
                    log_a[lg] = aw[i]
                    log_b[lg] = bw[i]
                lg += 1
            log_wlen[nwave] = w_sz

        # 5) counters, dooming, winner detection (branch-free updates,
        #    the two conditions below are almost never taken)
        for i in range(w_sz):
            t = tid_cur[i]
            isl = int64(1) - int64(kind[i])
            lc = leaf_cnt[t] + isl
            p = pend[t] + 1 - 2 * isl
            leaf_cnt[t] = lc
            pend[t] = p
            if lc + p > cap:
                dead[t] = 1
            elif p == 0 and dead[t] == 0:
                num = lc + 1
                for j in range(targets.shape[0]):
                    if targets[j] == num:
                        win_trial[nwin] = trial_base + t
                        win_size[nwin] = num
                        nwin += 1
                        break

        # 6) next frontier: children of surviving splits, left first;
        #    each child gets its index pair reserved here
        if 2 * n_split > cap_f:
            return nwin, nwave, -1
        w_nxt = 0
        for ii in range(n_split):
            i = splits[ii]
            t = tid_cur[i]
            if dead[t] == 0:
                k = kctr[t]
                if k + 4 > _K_CAP:
                    dead[t] = 1
                    continue
                kctr[t] = k + 4
                b = bw[i]
                a = aw[i]
                tid_nxt[w_nxt] = t
                th2_nxt[w_nxt] = b * b
                kk_nxt[w_nxt] = k
                tid_nxt[w_nxt + 1] = t
                th2_nxt[w_nxt + 1] = a * a
                kk_nxt[w_nxt + 1] = k + 2
                w_nxt += 2
        th2_cur, th2_nxt = th2_nxt, th2_cur
        tid_cur, tid_nxt = tid_nxt, tid_cur
        kk_cur, kk_nxt = kk_nxt, kk_cur
        w_sz = w_nxt
        nwave += 1

    return nwin, nwave, entries


@njit(cache=True)
def preorder_from_bfs(log_kind, log_a, log_b, log_wlen, n_waves,
                      out_parent, out_left, out_right,
                      out_fc, out_lc, out_ell, out_rank):
    """Turn one trial's breadth-first log into depth-first tree arrays.

    Children of the j-th split of a wave sit at positions 2j, 2j + 1 of
    the next wave, left child first.  Labels follow the stored corners
    (pi - alpha, pi - beta) so recomputing them later from the corner
    arrays reproduces them bit for bit.
    """
    m = out_parent.shape[0]
    ws = np.empty(n_waves + 1, dtype=np.int64)
    ws[0] = 0
    for w in range(n_waves):
        ws[w + 1] = ws[w] + log_wlen[w]

    left_b = np.full(m, -1, dtype=np.int64)
    right_b = np.full(m, -1, dtype=np.int64)
    par_b = np.full(m, -1, dtype=np.int64)
    for w in range(n_waves):
        srank = 0
        for i in range(log_wlen[w]):
            g = ws[w] + i
            if log_kind[g] == 1:
                lb = ws[w + 1] + 2 * srank
                left_b[g] = lb
                right_b[g] = lb + 1
                par_b[lb] = g
                par_b[lb + 1] = g
                srank += 1

    size = np.empty(m, dtype=np.int64)
    for g in range(m - 1, -1, -1):
        if log_kind[g] == 1:
            size[g] = 1 + size[left_b[g]] + size[right_b[g]]
        else:
            size[g] = 1

    pre = np.empty(m, dtype=np.int64)
    pre[0] = 0
    for g in range(m):
        if log_kind[g] == 1:
            lb = left_b[g]
            pre[lb] = pre[g] + 1
            pre[right_b[g]] = pre[g] + 1 + size[lb]

    ell_b = np.empty(m)
    ell_b[0] = 0.0
    pi = np.pi
    for g in range(m):
        if log_kind[g] == 1:
            fc = pi - log_a[g]
            lc = pi - log_b[g]
            a = pi - fc
            b = pi - lc
            sin_s = math.sin(a + b)
            e = ell_b[g]
            ell_b[left_b[g]] = e + 2.0 * math.log(math.sin(b) / sin_s)
            ell_b[right_b[g]] = e + 2.0 * math.log(math.sin(a) / sin_s)

    for g in range(m):
        p = pre[g]
        out_ell[p] = ell_b[g]
        if log_kind[g] == 1:
            out_left[p] = pre[left_b[g]]
            out_right[p] = pre[right_b[g]]
            out_fc[p] = pi - log_a[g]
            out_lc[p] = pi - log_b[g]
        else:
            out_left[p] = -1
            out_right[p] = -1
            out_fc[p] = np.nan
            out_lc[p] = np.nan
        out_parent[p] = -1 if par_b[g] < 0 else pre[par_b[g]]

    rk = 2
    for p in range(m):
        if out_left[p] < 0:
            out_rank[p] = rk
            rk += 1
        else:
            out_rank[p] = 0


@njit(cache=True)
def spine_fill(u, theta0, k0, alpha, beta, coef, icoef):
    """Advance the spine condition chain using a block of uniforms.

    Each proposal consumes three entries of u: the split-sum position,
    the split point, and the accept draw against F(a) F_inf(b) with
    envelope F(0).  Fills alpha/beta from k0 and stops when either the
    arrays are full or fewer than three uniforms remain; returns
    (next k, theta after the last accepted step).  The caller hands in
    fresh blocks until done, so the chain is a pure function of the
    generator state.
    """
    steps = alpha.shape[0]
    n_u = u.shape[0]
    kcn = coef.shape[0]
    zc = coef[0]
    pi2 = np.pi * np.pi
    th = theta0
    k = k0
    pos = 0
    while k < steps and pos + 3 <= n_u:
        t2 = th * th
        s = math.sqrt(t2 + u[pos] * (pi2 - t2))
        a = u[pos + 1] * s
        b = s - a
        uacc = u[pos + 2]
        pos += 3
        if not (0.0 < a and 0.0 < b and th < s < np.pi):
            continue
        ta = a * a
        tb = b * b
        f1 = coef[kcn - 1]
        f2 = icoef[kcn - 1]
        for j in range(kcn - 2, -1, -1):
            f1 = f1 * ta + coef[j]
            f2 = f2 * tb + icoef[j]
        if uacc * zc < f1 * f2:
            alpha[k] = a
            beta[k] = b
            th = b
            k += 1
    return k, th
