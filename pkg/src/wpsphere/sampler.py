"""Random tree samplers for the critical angle model.

A tree here is a plane binary tree rooted at a leaf, with a corner-angle
assignment at every cubic vertex and a real label on every edge.  The law
of interest weights each subtree hanging below a boundary condition theta
by the generating value F(theta), and the whole module is organized
around the one-step decomposition of that law:

  * sample_split       one leaf-or-split decision at condition theta;
  * sample_tree        a full tree grown depth first, with an overflow
                       guard instead of unbounded growth;
  * sample_tree_n      exact-size trees by rejection with early abort;
  * sample_forest_n    the same law drawn in bulk by a batched
                       breadth-first engine (two passes per batch: scan
                       for accepted trials, then replay and rebuild);
  * sample_kesten      the size-biased local limit: an infinite spine
                       with finite trees hanging off it;
  * theta_process      the drift-one jump path traced by the spine's
                       boundary condition;
  * blob_decompose     the cut-edge decomposition into irreducible
                       components, as a bicolored tree;
  * contour            the height / label / leaf-count walk around the
                       tree.

Angle bookkeeping at a cubic vertex: the two recorded corners, in
contour order, are (pi - alpha, pi - beta) where (alpha, beta) is the
sampled split; beta is handed to the left child and alpha to the right,
and the third corner alpha + beta sits opposite the parent edge.  Edge
labels follow the sine rule, ell_child = ell_parent
+ 2 log(sin(child condition) / sin(alpha + beta)), from ell = 0 on the
root edge.

Every sampler takes an explicit numpy Generator and is bit-reproducible
from its seed.  F and F_inf are evaluated from a shared lookup table on
a 2^20-point grid; linear interpolation keeps the absolute error below
4e-13, which tilts the law of an n-leaf tree by at most exp(4e-13 * n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import specfun

_PI = math.pi
_PI2 = math.pi * math.pi


class _Sentinel:
    __slots__ = ("_name",)

    def __init__(self, name):
        self._name = name

    def __repr__(self):
        return self._name


Leaf = _Sentinel("Leaf")
Overflow = _Sentinel("Overflow")


# ---------------------------------------------------------------------------
# lookup tables for F and F_inf

_TAB_N = 1 << 20
_TAB_SCALE = _TAB_N / _PI
_tables = None


def _get_tables():
    """(F table, F_inf table, x_c, Z_c), built once on first use."""
    global _tables
    if _tables is None:
        grid = np.linspace(0.0, _PI, _TAB_N + 1)
        cst = specfun.constants()
        _tables = (
            specfun.big_f(grid),
            specfun.f_inf(grid),
            cst.x_c,
            cst.z_xc,
        )
    return _tables


def _f_at(theta, tab):
    # scalar linear interpolation on the uniform [0, pi] grid
    x = theta * _TAB_SCALE
    i = int(x)
    if i >= _TAB_N:
        i = _TAB_N - 1
    w = x - i
    return float(tab[i]) * (1.0 - w) + float(tab[i + 1]) * w


def _f_vec(theta, tab):
    x = theta * _TAB_SCALE
    i = np.minimum(x.astype(np.int64), _TAB_N - 1)
    w = x - i
    return tab[i] * (1.0 - w) + tab[i + 1] * w


# ---------------------------------------------------------------------------
# tree container


@dataclass(eq=False)
class LabeledBinaryTree:
    """Plane binary tree rooted at a leaf, with corners and edge labels.

    Nodes are all vertices except the root leaf, indexed in depth-first
    (contour) order, so node 0 carries the root edge and the left child
    of an internal node i is always i + 1.

      parent, left, right : int32 node indices, -1 where absent; a node
          is a leaf iff left < 0
      first_corner, last_corner : the two recorded corner angles of a
          cubic vertex in contour order (NaN at leaves); the third
          corner, 2 pi minus their sum, faces the parent edge
      ell : label of each node's parent edge; ell[0] = 0
      leaf_rank : contour numbering of leaves from 2 to n, 0 at cubic
          nodes (the root leaf is number 1)
      bc0 : boundary condition the tree was grown from
    """

    n: int
    parent: np.ndarray
    left: np.ndarray
    right: np.ndarray
    first_corner: np.ndarray
    last_corner: np.ndarray
    ell: np.ndarray
    leaf_rank: np.ndarray
    bc0: float = 0.0

    @property
    def num_nodes(self):
        return self.parent.shape[0]

    @property
    def is_leaf(self):
        return self.left < 0

    @property
    def lam(self):
        """Penner-type edge weights exp(ell / 2); 1 on the root edge."""
        return np.exp(0.5 * self.ell)

    def middle_corner(self):
        """Corner opposite the parent edge at each cubic node (NaN at
        leaves).  Equals the split sum alpha + beta."""
        return 2.0 * _PI - self.first_corner - self.last_corner

    def split_pair(self, i):
        """(alpha, beta) of the split at cubic node i; beta went left."""
        if self.left[i] < 0:
            raise ValueError("node %d is a leaf" % i)
        return _PI - float(self.first_corner[i]), _PI - float(self.last_corner[i])

    def corner_triple(self, i):
        """The three corners at cubic node i in contour order."""
        a = float(self.first_corner[i])
        b = float(self.last_corner[i])
        return a, 2.0 * _PI - a - b, b


def _single_edge_tree(bc0=0.0):
    return LabeledBinaryTree(
        n=2,
        parent=np.array([-1], dtype=np.int32),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        first_corner=np.array([np.nan]),
        last_corner=np.array([np.nan]),
        ell=np.array([0.0]),
        leaf_rank=np.array([2], dtype=np.int32),
        bc0=bc0,
    )


# ---------------------------------------------------------------------------
# one split

def sample_split(theta, rng):
    """One growth decision at boundary condition theta.

    Returns the sentinel ``Leaf`` with probability x_c / F(theta), else
    a pair (alpha, beta) with density proportional to
    F(alpha) F(beta) on the trapezoid theta < alpha + beta < pi.  The
    second component is the left child's boundary condition.

    The pair is drawn by rejection: (alpha + beta, alpha) is uniform on
    the trapezoid (the sum has a linear density, inverted in closed
    form), and the proposal is accepted with probability
    F(alpha) F(beta) / F(0)^2.  Proposals landing on the boundary of
    the support through rounding are redrawn.
    """
    if not 0.0 <= theta <= _PI:
        raise ValueError("theta must lie in [0, pi]")
    f_tab, _, x_c, z_c = _get_tables()
    f_th = _f_at(theta, f_tab)
    if x_c >= f_th or rng.random() * f_th < x_c:
        # the first branch makes theta = pi a sure leaf even though the
        # tabulated F(pi) can sit a few ulps off x_c
        return Leaf
    return _one_split(theta, rng, f_tab, z_c)


def _one_split(theta, rng, f_tab, z_c):
    t2 = theta * theta
    span = _PI2 - t2
    zc2 = z_c * z_c
    while True:
        s = math.sqrt(t2 + rng.random() * span)
        a = rng.random() * s
        b = s - a
        if not (0.0 < a and 0.0 < b and theta < s < _PI):
            continue
        if rng.random() * zc2 < _f_at(a, f_tab) * _f_at(b, f_tab):
            return a, b


def _draw_splits_vec(theta, rng, f_tab, z_c):
    """Vectorized version of the split rejection, one pair per entry."""
    k = theta.shape[0]
    a = np.empty(k)
    b = np.empty(k)
    todo = np.arange(k)
    zc2 = z_c * z_c
    while todo.size:
        th = theta[todo]
        t2 = th * th
        s = np.sqrt(t2 + rng.random(todo.size) * (_PI2 - t2))
        al = rng.random(todo.size) * s
        be = s - al
        acc = (
            (rng.random(todo.size) * zc2 < _f_vec(al, f_tab) * _f_vec(be, f_tab))
            & (al > 0.0)
            & (be > 0.0)
            & (s > th)
            & (s < _PI)
        )
        hit = todo[acc]
        a[hit] = al[acc]
        b[hit] = be[acc]
        todo = todo[~acc]
    return a, b


# ---------------------------------------------------------------------------
# free trees

def sample_tree(theta, size_cap, rng):
    """A tree from boundary condition theta, or ``Overflow``.

    Grows depth first with an explicit stack (no recursion, so million-
    vertex trees are fine) and gives up as soon as the leaf count would
    exceed size_cap.  Labels are filled on the way down.
    """
    if not 0.0 <= theta <= _PI:
        raise ValueError("theta must lie in [0, pi]")
    if size_cap < 2:
        raise ValueError("size_cap must be at least 2")
    f_tab, _, x_c, z_c = _get_tables()

    parent, left, right = [], [], []
    fc, lc, ell = [], [], []
    leaves = 0
    # stack entries: (condition, parent index, went left, edge label)
    stack = [(theta, -1, False, 0.0)]
    while stack:
        bc, p, isl, e = stack.pop()
        i = len(parent)
        parent.append(p)
        if p >= 0:
            if isl:
                left[p] = i
            else:
                right[p] = i
        left.append(-1)
        right.append(-1)
        ell.append(e)
        f_th = _f_at(bc, f_tab)
        if x_c >= f_th or rng.random() * f_th < x_c:
            fc.append(math.nan)
            lc.append(math.nan)
            leaves += 1
            if leaves + 1 > size_cap:  # the root leaf always counts
                return Overflow
            continue
        a, b = _one_split(bc, rng, f_tab, z_c)
        fc.append(_PI - a)
        lc.append(_PI - b)
        # labels go through the stored corners so that angles_to_labels
        # reproduces them bit for bit
        a = _PI - fc[-1]
        b = _PI - lc[-1]
        sin_s = math.sin(a + b)
        # right first so the left child is popped next (contour order)
        stack.append((a, i, False, e + 2.0 * math.log(math.sin(a) / sin_s)))
        stack.append((b, i, True, e + 2.0 * math.log(math.sin(b) / sin_s)))

    rank = np.zeros(len(parent), dtype=np.int32)
    leaf_nodes = np.nonzero(np.asarray(left) < 0)[0]
    rank[leaf_nodes] = 2 + np.arange(leaf_nodes.size, dtype=np.int32)
    return LabeledBinaryTree(
        n=leaves + 1,
        parent=np.asarray(parent, dtype=np.int32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        first_corner=np.asarray(fc),
        last_corner=np.asarray(lc),
        ell=np.asarray(ell),
        leaf_rank=rank,
        bc0=theta,
    )


def sample_tree_n(n, rng):
    """An exact-size tree: n leaves under the critical law.

    Straight rejection on sample_tree(0, n, rng); the overflow guard
    aborts hopeless trials early, which keeps the expected cost at
    O(n^2) instead of O(n^(5/2)).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    while True:
        t = sample_tree(0.0, n, rng)
        if t is not Overflow and t.n == n:
            return t


# ---------------------------------------------------------------------------
# batched exact-size engine
#
# The same rejection as sample_tree_n, but run over B independent trials
# at once, breadth first: a wave holds every pending edge of every live
# trial, leaf decisions and split draws happen as single vector
# operations, and a trial dies the moment its committed leaf count
# (leaves so far plus pending edges) passes n.  Each batch is keyed by a
# seed drawn from the caller's generator, so it can be run twice: a scan
# pass that only finds which trials end with exactly n leaves, and a
# replay pass that repeats the identical draws while recording the waves
# of the accepted trials only.  Memory therefore stays at the wave front
# even though batches run hundreds of thousands of trials.

def _batch_run(key, n, batch, collect):
    """One batch; returns accepted trial ids (collect None) or a dict
    trial id -> per-wave log slices (collect a sequence of ids)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
    f_tab, _, x_c, z_c = _get_tables()
    target = n - 1  # grown leaves; the root leaf supplies the +1

    trial = np.arange(batch, dtype=np.int64)
    theta = np.zeros(batch)
    leaf_cnt = np.zeros(batch, dtype=np.int64)
    accepted = []
    if collect is not None:
        colset = np.asarray(sorted(collect), dtype=np.int64)
        logs = {int(t): [] for t in collect}
    while trial.size:
        f_th = _f_vec(theta, f_tab)
        isleaf = rng.random(trial.size) * f_th < x_c
        m = ~isleaf
        a, b = _draw_splits_vec(theta[m], rng, f_tab, z_c)
        if collect is not None:
            sel = np.isin(trial, colset)
            if sel.any():
                t_sel = trial[sel]
                l_sel = isleaf[sel]
                a_sel = a[sel[m]]
                b_sel = b[sel[m]]
                t_split = t_sel[~l_sel]
                for t in np.unique(t_sel):
                    pick = t_sel == t
                    pickm = t_split == t
                    logs[int(t)].append(
                        (l_sel[pick], a_sel[pickm], b_sel[pickm])
                    )
        leaf_cnt += np.bincount(trial[isleaf], minlength=batch)
        child_trial = np.repeat(trial[m], 2)
        child_theta = np.empty(child_trial.size)
        child_theta[0::2] = b  # left child first, condition beta
        child_theta[1::2] = a
        pend = np.bincount(child_trial, minlength=batch)
        in_wave = np.zeros(batch, dtype=bool)
        in_wave[trial] = True
        finished = in_wave & (pend == 0)
        if finished.any():
            ok = np.nonzero(finished & (leaf_cnt == target))[0]
            accepted.extend(int(t) for t in ok)
        doomed = leaf_cnt + pend > target
        keep = ~doomed[child_trial]
        trial = child_trial[keep]
        theta = child_theta[keep]
    if collect is None:
        return sorted(accepted)
    return logs


def _tree_from_log(waves, n):
    """Rebuild one accepted trial from its wave slices.

    The slices list the trial's entries level by level in frontier
    order; a split's children sit at positions 2j and 2j + 1 of the next
    level, left first.  Everything below is per-level vector work:
    child pointers, subtree sizes (reverse sweep), depth-first positions
    and labels (forward sweeps), then one scatter into contour order.
    """
    isleaf = np.concatenate([w[0] for w in waves])
    alpha = np.concatenate([w[1] for w in waves])
    beta = np.concatenate([w[2] for w in waves])
    m = isleaf.shape[0]
    level_sizes = [w[0].shape[0] for w in waves]
    starts = np.concatenate(([0], np.cumsum(level_sizes)))

    a_full = np.full(m, np.nan)
    b_full = np.full(m, np.nan)
    split_idx = np.nonzero(~isleaf)[0]
    a_full[split_idx] = alpha
    b_full[split_idx] = beta
    fc_full = _PI - a_full
    lc_full = _PI - b_full
    # label arithmetic goes through the stored corners (see sample_tree)
    a_full = _PI - fc_full
    b_full = _PI - lc_full

    left = np.full(m, -1, dtype=np.int64)
    right = np.full(m, -1, dtype=np.int64)
    parent = np.full(m, -1, dtype=np.int64)
    for w in range(len(level_sizes) - 1):
        lo, hi = starts[w], starts[w + 1]
        sp = np.nonzero(~isleaf[lo:hi])[0] + lo
        l_idx = starts[w + 1] + 2 * np.arange(sp.size)
        left[sp] = l_idx
        right[sp] = l_idx + 1
        parent[l_idx] = sp
        parent[l_idx + 1] = sp

    size = np.ones(m, dtype=np.int64)
    for w in range(len(level_sizes) - 2, -1, -1):
        lo, hi = starts[w], starts[w + 1]
        sp = np.nonzero(~isleaf[lo:hi])[0] + lo
        if sp.size:
            size[sp] += size[left[sp]] + size[right[sp]]

    pre = np.zeros(m, dtype=np.int64)
    ell = np.zeros(m)
    for w in range(len(level_sizes) - 1):
        lo, hi = starts[w], starts[w + 1]
        sp = np.nonzero(~isleaf[lo:hi])[0] + lo
        if not sp.size:
            continue
        l, r = left[sp], right[sp]
        pre[l] = pre[sp] + 1
        pre[r] = pre[sp] + 1 + size[l]
        sin_s = np.sin(a_full[sp] + b_full[sp])
        ell[l] = ell[sp] + 2.0 * np.log(np.sin(b_full[sp]) / sin_s)
        ell[r] = ell[sp] + 2.0 * np.log(np.sin(a_full[sp]) / sin_s)

    def scatter(src):
        out = np.empty(m, dtype=src.dtype)
        out[pre] = src
        return out

    def remap(idx):
        return np.where(idx >= 0, pre[np.maximum(idx, 0)], -1)
    tree = LabeledBinaryTree(
        n=n,
        parent=scatter(remap(parent)).astype(np.int32),
        left=scatter(remap(left)).astype(np.int32),
        right=scatter(remap(right)).astype(np.int32),
        first_corner=scatter(fc_full),
        last_corner=scatter(lc_full),
        ell=scatter(ell),
        leaf_rank=np.zeros(m, dtype=np.int32),
        bc0=0.0,
    )
    leaf_nodes = np.nonzero(tree.left < 0)[0]
    tree.leaf_rank[leaf_nodes] = 2 + np.arange(leaf_nodes.size, dtype=np.int32)
    return tree


def _default_batch(n):
    # large batches amortize the per-wave interpreter overhead; small n
    # accept so often that modest batches already keep every vector fat
    if n <= 64:
        return 1 << 12
    if n <= 512:
        return 1 << 14
    return 1 << 16


def _forest_numpy(n, count, rng, batch):
    out = []
    while len(out) < count:
        key = rng.integers(0, np.iinfo(np.int64).max, size=4)
        ids = _batch_run(key, n, batch, None)
        if not ids:
            continue
        take = ids[: count - len(out)]
        logs = _batch_run(key, n, batch, take)
        out.extend(_tree_from_log(logs[t], n) for t in take)
    return out


# ---------------------------------------------------------------------------
# compiled engine front end
#
# The compiled engines run the same rejection with counter based
# randomness: draw j of global trial t is a fixed hash of (seeds, t,
# j).  The scan pass streams batches of trials and only records which
# global ids finished at a wanted size; each winner is then replayed
# alone, which repeats its draw sequence exactly.  Batch size is a
# throughput knob and cannot change the output: winners are consumed
# in global trial order, and a trial's draws do not depend on its
# batch mates.
#
# There are two scan engines behind one front end: the numba kernel
# (_kernel) and an optional C extension (_wavec) that makes identical
# decisions draw for draw but runs the per-edge work vectorized.
# Replay always goes through the numba kernel, so the trees built from
# a scan are byte-identical whichever engine scanned, and a diverging
# C build would be caught loudly by the replay guard below.  Imports
# are deferred until first use.

_FAST_BATCH = 1 << 13


def _kernel_mod():
    from . import _kernel

    return _kernel


_WAVEC = ()


def _wavec_mod():
    """The C scan engine, or None when the extension was not built."""
    global _WAVEC
    if _WAVEC == ():
        try:
            from . import _wavec

            _WAVEC = _wavec
        except ImportError:
            _WAVEC = None
    return _WAVEC


def _resolve_engine(engine):
    if engine == "fast":
        return "c" if _wavec_mod() is not None else "numba"
    if engine == "c" and _wavec_mod() is None:
        raise RuntimeError("the _wavec extension is not built")
    if engine in ("c", "numba"):
        return engine
    raise ValueError("unknown engine %r" % (engine,))


def _scan_need(need, seed1, seed2, batch, engine="numba"):
    """Scan pass: {size: count} -> {size: winning global trial ids}."""
    ker = _kernel_mod()
    targets = np.array(sorted(need), dtype=np.int64)
    if targets[0] < 2:
        raise ValueError("need sizes >= 2")
    use_c = engine == "c"
    if use_c:
        wc = _wavec_mod()
        thr, gtab = _c_tables()
    cap_f = 8 * batch + 16
    win_trial = np.empty(batch, dtype=np.int64)
    win_size = np.empty(batch, dtype=np.int64)
    nolog_k = np.empty(1, dtype=np.uint8)
    nolog_f = np.empty(1)
    nolog_w = np.empty(1, dtype=np.int64)
    got = {int(n): [] for n in targets}
    trial_base = 0
    while any(len(got[n]) < need[n] for n in got):
        if trial_base >= 1 << 40:
            raise RuntimeError("trial budget exhausted")
        if use_c:
            arrays = (
                (targets, ker._COEF, thr, gtab)
                + _c_scratch(batch, cap_f)
                + (win_trial, win_size, nolog_k, nolog_f, nolog_f, nolog_w)
            )
            nwin, _, entries = wc.run_batch(
                int(seed1), int(seed2), trial_base, batch, 0,
                ker._X_C, ker._Z_C, arrays,
            )
        else:
            scratch = _scan_scratch(batch, cap_f)
            nwin, _, entries = ker.run_batch(
                np.uint64(seed1), np.uint64(seed2), trial_base, batch,
                targets,
                ker._COEF, ker._LO_S, ker._LO_C, ker._UP_S, ker._UP_C,
                ker._X_C, ker._Z_C,
                *scratch,
                win_trial, win_size,
                0, nolog_k, nolog_f, nolog_f, nolog_w,
            )
        if entries == -1:
            cap_f *= 2
            continue
        if nwin:
            order = np.argsort(win_trial[:nwin], kind="stable")
            for idx in order:
                sz = int(win_size[idx])
                if len(got[sz]) < need[sz]:
                    got[sz].append(int(win_trial[idx]))
        trial_base += batch
    return got


_scan_cache = {}


def _scan_scratch(batch, cap_f):
    """Reusable work arrays for run_batch, keyed by shape."""
    key = (batch, cap_f)
    if key not in _scan_cache:
        _scan_cache.clear()
        _scan_cache[key] = (
            np.empty(cap_f), np.empty(cap_f, dtype=np.int64),
            np.empty(cap_f, dtype=np.int64),
            np.empty(cap_f), np.empty(cap_f, dtype=np.int64),
            np.empty(cap_f, dtype=np.int64),
            np.empty(cap_f), np.empty(cap_f, dtype=np.uint8),
            np.empty(cap_f), np.empty(cap_f),
            np.empty(cap_f, dtype=np.int64), np.empty(cap_f, dtype=np.int64),
            np.empty(batch, dtype=np.int64), np.empty(batch, dtype=np.int64),
            np.empty(batch, dtype=np.uint8), np.empty(batch, dtype=np.int64),
        )
    return _scan_cache[key]


_c_cache = {}


def _c_tables():
    """Screen tables for the C engine.

    The leaf test there compares the high hash word against packed
    integer thresholds (a certain-leaf and a certain-split cutoff per
    interval of theta^2), and the split accept test compares u3 against
    products of per-interval (min, max) bounds on F/z_c.  Both screens
    are padded well past every rounding effect, and anything between
    the cutoffs is decided by the exact polynomial, so they route
    exactly like the kernel's linear bounds.  One guard entry at the
    top, as in the kernel tables.
    """
    if "tab" not in _c_cache:
        ker = _kernel_mod()
        nb = ker._N_BOUND
        edges = np.linspace(0.0, math.pi * math.pi, nb + 1)
        fe = ker._poly_eval(ker._COEF, edges)  # decreasing in theta^2
        fmax = fe[:-1] * (1.0 + 1e-9)
        fmin = fe[1:] * (1.0 - 1e-9)
        lo = np.floor(2.0 ** 32 * ker._X_C / fmax - 0.5).astype(np.int64) - 4
        hi = np.ceil(2.0 ** 32 * ker._X_C / fmin - 0.5).astype(np.int64) + 4
        lo = np.clip(lo, 0, 2 ** 32 - 1).astype(np.uint64)
        hi = np.clip(hi - 1, 0, 2 ** 32 - 1).astype(np.uint64)
        thr = np.empty(nb + 1, dtype=np.uint64)
        thr[:nb] = (hi << np.uint64(32)) | lo
        thr[nb] = thr[nb - 1]
        g = np.empty(2 * (nb + 1))
        g[0:2 * nb:2] = fe[1:] / ker._Z_C * (1.0 - 1e-9)
        g[1:2 * nb:2] = fe[:-1] / ker._Z_C * (1.0 + 1e-9)
        g[2 * nb] = g[2 * nb - 2]
        g[2 * nb + 1] = g[2 * nb - 1]
        _c_cache["tab"] = (thr, g)
    return _c_cache["tab"]


def _c_scratch(batch, cap_f):
    """Work arrays for the C engine, keyed by shape (single slot)."""
    key = (batch, cap_f)
    if _c_cache.get("scratch_key") != key:
        _c_cache["scratch"] = (
            # frontier double buffers: theta^2 and trial|index words
            np.empty(cap_f), np.empty(cap_f, dtype=np.uint64),
            np.empty(cap_f), np.empty(cap_f, dtype=np.uint64),
            # per-slot: u1, kind, gray, accepted split angles
            np.empty(cap_f), np.empty(cap_f, dtype=np.uint8),
            np.empty(cap_f, dtype=np.uint8),
            np.empty(cap_f), np.empty(cap_f),
            # split payload for the rejection rounds
            np.empty(cap_f, dtype=np.int64), np.empty(cap_f, dtype=np.int64),
            np.empty(cap_f, dtype=np.uint64),
            np.empty(cap_f), np.empty(cap_f),
            np.empty(cap_f), np.empty(cap_f),
            np.empty(cap_f, dtype=np.uint8), np.empty(cap_f, dtype=np.uint8),
            # per-trial: leaf|pending word, dead flag, draw counter
            np.empty(batch, dtype=np.uint64),
            np.empty(batch, dtype=np.uint8), np.empty(batch, dtype=np.int64),
        )
        _c_cache["scratch_key"] = key
    return _c_cache["scratch"]


def _replay_tree(seed1, seed2, trial, n):
    """Replay one winning trial and build its tree."""
    ker = _kernel_mod()
    m = 2 * n - 3
    targets = np.array([n], dtype=np.int64)
    log_kind = np.empty(m, dtype=np.uint8)
    log_a = np.empty(m)
    log_b = np.empty(m)
    log_wlen = np.empty(m, dtype=np.int64)
    win_trial = np.empty(1, dtype=np.int64)
    win_size = np.empty(1, dtype=np.int64)
    cap_f = 2 * n + 8
    scratch = _scan_scratch(1, cap_f)
    nwin, nwave, entries = ker.run_batch(
        np.uint64(seed1), np.uint64(seed2), trial, 1, targets,
        ker._COEF, ker._LO_S, ker._LO_C, ker._UP_S, ker._UP_C,
        ker._X_C, ker._Z_C,
        *scratch,
        win_trial, win_size,
        1, log_kind, log_a, log_b, log_wlen,
    )
    if nwin != 1 or entries != m:
        raise RuntimeError("replay diverged from scan")
    parent = np.empty(m, dtype=np.int64)
    left = np.empty(m, dtype=np.int64)
    right = np.empty(m, dtype=np.int64)
    fc = np.empty(m)
    lc = np.empty(m)
    ell = np.empty(m)
    rank = np.empty(m, dtype=np.int64)
    ker.preorder_from_bfs(log_kind, log_a, log_b, log_wlen, nwave,
                          parent, left, right, fc, lc, ell, rank)
    return LabeledBinaryTree(
        n=n,
        parent=parent.astype(np.int32),
        left=left.astype(np.int32),
        right=right.astype(np.int32),
        first_corner=fc,
        last_corner=lc,
        ell=ell,
        leaf_rank=rank.astype(np.int32),
        bc0=0.0,
    )


def forest_campaign(need, rng, batch=None, lazy=False, engine="fast"):
    """Exact-size samples at several sizes from one trial stream.

    ``need`` maps size to count.  All sizes are served by a single scan
    capped at the largest size, so the smaller ones come from trials
    that happened to die at the right size anyway; their marginal cost
    is just the replay.  Returns {size: list of trees}, or with
    ``lazy`` {size: generator} so that bulk campaigns can consume trees
    one at a time without holding them all.

    ``engine`` selects the scan implementation: "fast" takes the C
    extension when built and the numba kernel otherwise; "c" and
    "numba" force one.  Both make identical decisions for identical
    seeds, and replay is always the numba kernel, so the choice cannot
    change the output.
    """
    if not need:
        return {}
    for n, c in need.items():
        if n < 2:
            raise ValueError("need sizes >= 2")
        if c < 0:
            raise ValueError("need counts >= 0")
    if batch is None:
        batch = _FAST_BATCH
    eng = _resolve_engine(engine)
    s1, s2 = rng.integers(0, 2 ** 64, size=2, dtype=np.uint64)
    got = _scan_need(need, s1, s2, batch, eng)

    def stream(n, ids):
        for t in ids:
            yield _replay_tree(s1, s2, t, n)

    if lazy:
        return {n: stream(n, got[n]) for n in need}
    return {n: [_replay_tree(s1, s2, t, n) for t in got[n]] for n in need}


def sample_forest_n(n, count, rng, batch=None, engine="fast"):
    """``count`` independent exact-size trees, same law as sample_tree_n.

    engine "fast", "c" or "numba" picks a compiled scan/replay engine
    (see forest_campaign); engine "numpy" is the pure-numpy wave
    engine kept as an independent reference implementation of the same
    law.  Either way the accepted trials are taken in trial order,
    which is blind to tree content, so the output is an i.i.d. sample.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if count < 0:
        raise ValueError("need count >= 0")
    if engine in ("fast", "c", "numba"):
        return forest_campaign({n: count}, rng, batch, engine=engine)[n]
    if engine != "numpy":
        raise ValueError("unknown engine %r" % (engine,))
    if batch is None:
        batch = _default_batch(n)
    return _forest_numpy(n, count, rng, batch)


# ---------------------------------------------------------------------------
# labels from angles

def angles_to_labels(tree):
    """Recompute edge labels from the stored corners, in place.

    Propagates the sine rule down from ell = 0 at the root edge and
    returns the tree.  Raises if any corner is within rounding distance
    of 0 or pi (sine below 1e-14), where the rule degenerates.
    """
    m = tree.num_nodes
    ell = np.zeros(m)
    fc, lc = tree.first_corner, tree.last_corner
    left, right = tree.left, tree.right
    for i in range(m):
        l = left[i]
        if l < 0:
            continue
        a = _PI - fc[i]
        b = _PI - lc[i]
        sin_a, sin_b, sin_s = math.sin(a), math.sin(b), math.sin(a + b)
        if min(abs(sin_a), abs(sin_b), abs(sin_s)) < 1e-14:
            raise ValueError("degenerate corner at node %d" % i)
        ell[l] = ell[i] + 2.0 * math.log(sin_b / sin_s)
        ell[right[i]] = ell[i] + 2.0 * math.log(sin_a / sin_s)
    tree.ell = ell
    return tree


# ---------------------------------------------------------------------------
# blob decomposition

@dataclass(eq=False)
class BlobTree:
    """Bicolored component tree of the cut-edge decomposition.

    Black vertices are blobs: components of the tree under non-cut
    edges, plus one trivial blob per leaf whose edge is cut.  Every leaf
    of the original tree (the root leaf included) dangles from its blob
    as a red leaf.  The root of the bicolored tree is the red root leaf,
    attached to root_blob.

      cut : per node, whether its parent edge is a cut edge
      blob_of : per node, the blob containing it (a cut leaf is its own)
      blob_parent : per blob, the blob across its rootward cut edge
          (-1 at root_blob)
      deg_b : per blob, number of neighbouring blobs (red leaves do not
          count)
      red_count : per blob, number of red leaves attached
      blob_size : per blob, number of cubic vertices inside (0 for the
          trivial blobs)
    """

    n: int
    num_blobs: int
    cut: np.ndarray
    blob_of: np.ndarray
    root_blob: int
    blob_parent: np.ndarray
    deg_b: np.ndarray
    red_count: np.ndarray
    blob_size: np.ndarray


def blob_decompose(tree):
    """Cut-edge decomposition of a labeled tree.

    An edge is cut when the corner facing it is at least pi/2 at every
    cubic endpoint; a leaf endpoint imposes nothing, so the single edge
    of the two-leaf tree is cut by convention (no cubic endpoint at
    all).  Equivalently, by the sine rule, the squared lambda weights of
    the flanking edges sum to at least lambda_e^2 on each tested side.
    """
    m = tree.num_nodes
    left, right, parent = tree.left, tree.right, tree.parent
    internal = left >= 0

    cut = np.ones(m, dtype=bool)
    # corner facing the parent edge at the node below it
    mid = tree.middle_corner()
    cut[internal] &= mid[internal] >= _PI / 2
    # corner facing the child edge at the parent above it
    has_par = parent >= 0
    pidx = parent[has_par]
    is_left = left[pidx] == np.nonzero(has_par)[0]
    opp = np.where(is_left, tree.last_corner[pidx], tree.first_corner[pidx])
    cut[has_par] &= opp >= _PI / 2

    # components under non-cut edges; a leaf with a cut edge stands alone
    root_comp = np.arange(m, dtype=np.int64)

    def find(i):
        while root_comp[i] != i:
            root_comp[i] = root_comp[root_comp[i]]
            i = root_comp[i]
        return i

    for i in range(1, m):
        if not cut[i]:
            ri, rp = find(i), find(parent[i])
            if ri != rp:
                root_comp[ri] = rp

    reps = np.array([find(i) for i in range(m)], dtype=np.int64)
    blob_ids = {}
    blob_of = np.empty(m, dtype=np.int64)
    for i in range(m):
        blob_of[i] = blob_ids.setdefault(int(reps[i]), len(blob_ids))
    # the root leaf: its own trivial blob when the root edge is cut
    if cut[0]:
        root_blob = len(blob_ids)
        nb = root_blob + 1
    else:
        root_blob = int(blob_of[0])
        nb = len(blob_ids)

    deg_b = np.zeros(nb, dtype=np.int64)
    blob_parent = np.full(nb, -1, dtype=np.int64)
    for i in range(m):
        if cut[i]:
            lo = int(blob_of[i])
            up = root_blob if i == 0 else int(blob_of[parent[i]])
            deg_b[lo] += 1
            deg_b[up] += 1
            blob_parent[lo] = up

    red_count = np.zeros(nb, dtype=np.int64)
    leaf_nodes = np.nonzero(~internal)[0]
    for i in leaf_nodes:
        red_count[blob_of[i]] += 1
    red_count[root_blob] += 1  # the root leaf dangles from its blob

    blob_size = np.bincount(blob_of[internal], minlength=nb)
    return BlobTree(
        n=tree.n,
        num_blobs=nb,
        cut=cut,
        blob_of=blob_of,
        root_blob=root_blob,
        blob_parent=blob_parent,
        deg_b=deg_b,
        red_count=red_count,
        blob_size=blob_size,
    )


# ---------------------------------------------------------------------------
# contour encoding

@dataclass(eq=False)
class ContourTriple:
    """Height, label and leaf-count processes of the contour walk.

    All three arrays have length 4n - 5, one entry per vertex visit.
    c is the graph distance from the root leaf (0 exactly at the ends),
    z the label of the edge most recently traversed (the walk starts on
    the root edge, so z[0] = ell[0]), and r the number of leaves fully
    visited, counting the root leaf on the final return.
    """

    n: int
    c: np.ndarray
    z: np.ndarray
    r: np.ndarray


def contour(tree):
    """Walk the contour and record heights, labels and leaf counts."""
    m = tree.num_nodes
    steps = 2 * m
    c = np.zeros(steps + 1, dtype=np.int32)
    z = np.zeros(steps + 1)
    r = np.zeros(steps + 1, dtype=np.int32)
    left, right, ell = tree.left, tree.right, tree.ell
    z[0] = ell[0]
    t = 0
    # (node, down) pushed in reverse visiting order
    stack = [(0, False), (0, True)]
    while stack:
        i, down = stack.pop()
        t += 1
        c[t] = c[t - 1] + (1 if down else -1)
        z[t] = ell[i]
        r[t] = r[t - 1]
        if down:
            l = left[i]
            if l < 0:
                r[t] += 1
            else:
                stack.append((right[i], False))
                stack.append((right[i], True))
                stack.append((left[i], False))
                stack.append((left[i], True))
    r[steps] += 1  # the root leaf, on arrival back home
    return ContourTriple(n=tree.n, c=c, z=z, r=r)


# ---------------------------------------------------------------------------
# the size-biased spine

def _spine_step(theta, rng, f_tab, fi_tab, z_c):
    """One spine split: (a, b) with density proportional to
    F(a) F_inf(b) on the trapezoid theta < a + b < pi.  a conditions the
    finite subtree, b becomes the next spine condition."""
    t2 = theta * theta
    span = _PI2 - t2
    while True:
        s = math.sqrt(t2 + rng.random() * span)
        a = rng.random() * s
        b = s - a
        if not (0.0 < a and 0.0 < b and theta < s < _PI):
            continue
        if rng.random() * z_c < _f_at(a, f_tab) * _f_at(b, fi_tab):
            return a, b


_HANG_CAP = 10 ** 6


@dataclass(eq=False)
class KestenSample:
    """A depth-limited draw of the infinite spine.

    Per step k: the split (alpha[k], beta[k]) at spine vertex k, with
    alpha conditioning the finite subtree and beta the continuation;
    side_left[k] says whether the finite subtree hangs on the left; the
    finite subtree itself is trees[k].  theta[k] is the condition of the
    k-th spine edge (theta[0] = 0) and theta[k+1] = beta[k].  ell_spine
    labels the spine edges from ell_spine[0] = 0, and ell_hang[k] is the
    absolute label of trees[k]'s root edge (the tree's own ell array is
    relative to it).
    """

    depth: int
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    side_left: np.ndarray
    trees: list
    ell_spine: np.ndarray
    ell_hang: np.ndarray

    def spine_corners(self, k):
        """(first, middle, last) corners at spine vertex k."""
        lo = self.alpha[k] if self.side_left[k] else self.beta[k]
        hi = self.beta[k] if self.side_left[k] else self.alpha[k]
        # first corner faces the right child, last faces the left
        return _PI - hi, self.alpha[k] + self.beta[k], _PI - lo


def sample_kesten(depth, rng):
    """The local limit around the root: spine to the given depth.

    Each step draws the spine split, a fair side for the finite
    subtree, then the subtree itself from the split's finite condition
    (retried in the astronomically unlikely event it overflows the
    million-leaf guard).  That fixed draw order makes the sample
    reproducible from the seed.
    """
    if depth < 1:
        raise ValueError("need depth >= 1")
    f_tab, fi_tab, _, z_c = _get_tables()
    alpha = np.empty(depth)
    beta = np.empty(depth)
    theta = np.zeros(depth + 1)
    side = np.empty(depth, dtype=bool)
    trees = []
    ell_spine = np.zeros(depth + 1)
    ell_hang = np.empty(depth)
    for k in range(depth):
        a, b = _spine_step(theta[k], rng, f_tab, fi_tab, z_c)
        alpha[k] = a
        beta[k] = b
        theta[k + 1] = b
        side[k] = rng.random() < 0.5
        t = sample_tree(a, _HANG_CAP, rng)
        while t is Overflow:
            t = sample_tree(a, _HANG_CAP, rng)
        trees.append(t)
        sin_s = math.sin(a + b)
        ell_spine[k + 1] = ell_spine[k] + 2.0 * math.log(math.sin(b) / sin_s)
        ell_hang[k] = ell_spine[k] + 2.0 * math.log(math.sin(a) / sin_s)
    return KestenSample(
        depth=depth,
        alpha=alpha,
        beta=beta,
        theta=theta,
        side_left=side,
        trees=trees,
        ell_spine=ell_spine,
        ell_hang=ell_hang,
    )


@dataclass(eq=False)
class ThetaProcess:
    """Piecewise path of the spine condition in continuous time.

    Starts at 0, rises with slope one, and at level pre_jump[k] (time
    jump_times[k]) drops to post_jump[k].  theta_end is the value at
    t_max.
    """

    t_max: float
    jump_times: np.ndarray
    pre_jump: np.ndarray
    post_jump: np.ndarray
    theta_end: float

    def value(self, t):
        """Path value at time(s) t; vectorized."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.t_max):
            raise ValueError("t outside [0, t_max]")
        seg = np.searchsorted(self.jump_times, t, side="right")
        starts = np.concatenate(([0.0], self.jump_times))
        levels = np.concatenate(([0.0], self.post_jump))
        return levels[seg] + (t - starts[seg])


def theta_process(t_max, rng):
    """Run the condition path on [0, t_max] and record its jumps.

    Between jumps the path is the running split sum; a jump from level s
    lands at b with density proportional to F(s - b) F_inf(b), which is
    exactly the spine step, so the path is the continuous-time view of
    the chain sample_kesten walks.
    """
    if not t_max > 0:
        raise ValueError("need t_max > 0")
    f_tab, fi_tab, _, z_c = _get_tables()
    t = 0.0
    th = 0.0
    times, pres, posts = [], [], []
    while True:
        a, b = _spine_step(th, rng, f_tab, fi_tab, z_c)
        s = a + b
        t_jump = t + (s - th)
        if t_jump > t_max:
            theta_end = th + (t_max - t)
            break
        times.append(t_jump)
        pres.append(s)
        posts.append(b)
        t = t_jump
        th = b
    return ThetaProcess(
        t_max=float(t_max),
        jump_times=np.asarray(times),
        pre_jump=np.asarray(pres),
        post_jump=np.asarray(posts),
        theta_end=theta_end,
    )


# ---------------------------------------------------------------------------
# spine chain without the hanging trees

@dataclass(eq=False)
class SpineChain:
    """The (alpha, beta) chain of spine splits and the spine labels.

    Same marginal chain as sample_kesten, with the hanging trees never
    grown, so millions of steps are cheap.  theta[k] = beta[k-1] is the
    condition of spine edge k (theta[0] = theta0), and ell[k] its label
    with ell[0] = 0.  alpha, beta have length steps; theta and ell have
    length steps + 1.
    """

    steps: int
    theta0: float
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    ell: np.ndarray


def spine_chain(steps, rng, theta0=0.0):
    """Run the spine condition chain for the given number of steps."""
    if steps < 1:
        raise ValueError("need steps >= 1")
    if not 0.0 <= theta0 < _PI:
        raise ValueError("theta0 must lie in [0, pi)")
    ker = _kernel_mod()
    alpha = np.empty(steps)
    beta = np.empty(steps)
    k = 0
    th = theta0
    while k < steps:
        # ~5.3 uniforms per step on average; unused block tails are
        # discarded, and long runs refill in bounded slabs so memory
        # stays flat
        block = rng.random(min(8 * (steps - k) + 64, 4_000_000))
        k, th = ker.spine_fill(block, th, k, alpha, beta,
                               ker._COEF, ker._ICOEF)
    theta = np.empty(steps + 1)
    theta[0] = theta0
    theta[1:] = beta
    ell = np.empty(steps + 1)
    ell[0] = 0.0
    np.cumsum(2.0 * np.log(np.sin(beta) / np.sin(alpha + beta)), out=ell[1:])
    return SpineChain(steps=steps, theta0=theta0, alpha=alpha, beta=beta,
                      theta=theta, ell=ell)


def spine_cut_flags(alpha, beta):
    """Cut-edge indicators along the spine, one per spine edge.

    Edge k runs from spine vertex k-1 to spine vertex k; it is cut when
    the corner facing it is at least pi/2 at both cubic endpoints: the
    corner pi - beta[k-1] above (so beta[k-1] <= pi/2) and the corner
    alpha[k] + beta[k] below.  Edge 0 ends at the root leaf, which
    imposes nothing, so only the lower corner is tested there.  The
    same rule blob_decompose applies to finite trees.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.shape != beta.shape or alpha.ndim != 1 or alpha.size < 1:
        raise ValueError("alpha and beta must be equal-length 1-d arrays")
    half = _PI / 2
    cut = (alpha + beta) >= half
    cut[1:] &= beta[:-1] <= half
    return cut


# ---------------------------------------------------------------------------
# local balls around the root leaf

def ball_type(tree, radius=3):
    """Shape of the induced radius-r ball around the root leaf.

    Nested pair encoding, one level per edge: "L" for a leaf endpoint,
    a (left, right) tuple for a cubic one, and "?" for any endpoint at
    distance exactly r, whose degree the ball cannot see.  Hashable,
    so shape laws can be compared by binning.
    """
    if radius < 1:
        raise ValueError("need radius >= 1")
    left, right = tree.left, tree.right

    def enc(i, d):
        if d == radius:
            return "?"
        l = left[i]
        if l < 0:
            return "L"
        return (enc(l, d + 1), enc(int(right[i]), d + 1))

    return enc(0, 1)


def kesten_ball(rng, radius=3):
    """ball_type of a fresh draw of the local limit around the root.

    Only what the ball can see is drawn: radius - 1 spine steps, their
    fair sides, and each hanging subtree grown just to its remaining
    depth (the growth law is local, so truncating the recursion at the
    horizon leaves the shape law untouched).  Draw order matches
    sample_kesten step for step: split, side, subtree.
    """
    if radius < 1:
        raise ValueError("need radius >= 1")
    f_tab, fi_tab, x_c, z_c = _get_tables()

    def grow(bc, depth_left):
        if depth_left == 0:
            return "?"
        f_th = _f_at(bc, f_tab)
        if x_c >= f_th or rng.random() * f_th < x_c:
            return "L"
        a, b = _one_split(bc, rng, f_tab, z_c)
        return (grow(b, depth_left - 1), grow(a, depth_left - 1))

    th = 0.0
    levels = []
    for k in range(radius - 1):
        a, b = _spine_step(th, rng, f_tab, fi_tab, z_c)
        hang_left = rng.random() < 0.5
        hang = grow(a, radius - (k + 2))
        levels.append((hang_left, hang))
        th = b
    code = "?"
    for hang_left, hang in reversed(levels):
        code = (hang, code) if hang_left else (code, hang)
    return code


# ---------------------------------------------------------------------------
# serialization

def tree_to_json(tree):
    """Plain-dict encoding of a tree.

    children: nested pair lists below the root edge, null at leaves;
    angles: per cubic vertex in contour order, the recorded corner pair;
    ell: per edge in contour order.
    """
    m = tree.num_nodes
    enc = [None] * m
    left, right = tree.left, tree.right
    for i in range(m - 1, -1, -1):
        if left[i] >= 0:
            enc[i] = [enc[left[i]], enc[right[i]]]
    internal = np.nonzero(left >= 0)[0]
    return {
        "n": int(tree.n),
        "children": enc[0],
        "angles": [
            [float(tree.first_corner[i]), float(tree.last_corner[i])]
            for i in internal
        ],
        "ell": [float(x) for x in tree.ell],
    }


def tree_from_json(data):
    """Rebuild a tree from the tree_to_json encoding; validates shape,
    counts and angle ranges."""
    try:
        n = int(data["n"])
        children = data["children"]
        angles = data["angles"]
        ell = [float(x) for x in data["ell"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError("malformed tree document: %s" % exc) from None
    if n < 2:
        raise ValueError("n must be at least 2")

    parent, left, right = [], [], []
    # stack entries: (encoded subtree, parent index, went left)
    stack = [(children, -1, False)]
    while stack:
        node, p, isl = stack.pop()
        i = len(parent)
        parent.append(p)
        left.append(-1)
        right.append(-1)
        if p >= 0:
            if isl:
                left[p] = i
            else:
                right[p] = i
        if node is None:
            continue
        if not isinstance(node, (list, tuple)) or len(node) != 2:
            raise ValueError("children entries must be null or pairs")
        stack.append((node[1], i, False))
        stack.append((node[0], i, True))

    m = len(parent)
    left = np.asarray(left, dtype=np.int32)
    right = np.asarray(right, dtype=np.int32)
    leaf_nodes = np.nonzero(left < 0)[0]
    internal = np.nonzero(left >= 0)[0]
    if leaf_nodes.size != n - 1:
        raise ValueError(
            "shape has %d leaves below the root, expected %d"
            % (leaf_nodes.size, n - 1)
        )
    if len(angles) != internal.size:
        raise ValueError("need one corner pair per cubic vertex")
    if len(ell) != m:
        raise ValueError("need one label per edge")

    fc = np.full(m, np.nan)
    lc = np.full(m, np.nan)
    for i, pair in zip(internal, angles):
        a, b = float(pair[0]), float(pair[1])
        if not (0.0 < a < _PI and 0.0 < b < _PI and a + b > _PI):
            raise ValueError("corner pair (%g, %g) not allowed" % (a, b))
        fc[i] = a
        lc[i] = b

    rank = np.zeros(m, dtype=np.int32)
    rank[leaf_nodes] = 2 + np.arange(leaf_nodes.size, dtype=np.int32)
    return LabeledBinaryTree(
        n=n,
        parent=np.asarray(parent, dtype=np.int32),
        left=left,
        right=right,
        first_corner=fc,
        last_corner=lc,
        ell=np.asarray(ell),
        leaf_rank=rank,
    )
