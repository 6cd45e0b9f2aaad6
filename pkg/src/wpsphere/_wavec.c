/* C scan engine for exact-size tree sampling.
 *
 * This is a drop-in twin of the numba wave kernel (_kernel.run_batch):
 * same counter hash, same uniform mapping, same exact accept tests, so
 * for equal seeds both engines make identical decisions and report
 * identical winners.  Only the screening layer differs.  The leaf test
 * compares the raw 32-bit hash word against per-interval integer
 * thresholds, and the split accept test compares u3 against products
 * of premultiplied per-interval bounds on F/z_c; draws that land
 * between a screen's bounds are decided by the exact 16-term
 * polynomial, exactly as in the numba kernel, so a screen can narrow
 * the gray zone but never flip a decision.
 *
 * Bookkeeping runs on packed words to keep the scalar glue between the
 * vector passes thin.  A frontier edge is (theta^2, trial << 24 | j)
 * where j is its reserved draw index, so the hash input is one add of
 * the trial base; the first split round reuses the same word plus one;
 * and the per-trial leaf/pending counters share a single u64.  None of
 * this changes any draw: the (trial, index) -> uniform map is the
 * kernel's, reservation order included.
 *
 * The hot passes are plain restrict loops shaped for clang's
 * auto-vectorizer (AVX-512 with gathers on x86).  Floating-point
 * semantics are pinned by the build flags: -ffp-contract=off keeps
 * every multiply and add a separate IEEE operation, which is what the
 * numba code generation does, and -fno-math-errno lets sqrt vectorize
 * without changing any result.
 */

#define PY_SSIZE_T_CLEAN
#include <Python.h>

#define NPY_NO_DEPRECATED_API NPY_1_7_API_VERSION
#include <numpy/ndarrayobject.h>

#include <math.h>
#include <stdint.h>
#include <string.h>

#define N_COEF 16
#define K_CAP (1LL << 24)
#define TRIAL_MASK (~0xFFFFFFULL)

static const uint64_t MIX_A = 0xBF58476D1CE4E5B9ULL;
static const uint64_t MIX_B = 0x94D049BB133111EBULL;
static const uint64_t GOLD = 0x9E3779B97F4A7C15ULL;
static const double INV32 = 1.0 / 4294967296.0;

/* Two rounds of the splitmix64 finalizer over the packed counter,
 * seed words mixed in between; must stay word-for-word in sync with
 * _kernel._hash2. */
static inline uint64_t
mix2(uint64_t z, uint64_t s1, uint64_t s2)
{
    z = (z ^ s1) + GOLD;
    z = (z ^ (z >> 30)) * MIX_A;
    z = (z ^ (z >> 27)) * MIX_B;
    z ^= z >> 31;
    z ^= s2;
    z = (z ^ (z >> 30)) * MIX_A;
    z = (z ^ (z >> 27)) * MIX_B;
    return z ^ (z >> 31);
}

static inline double
horner(const double *coef, double t)
{
    double f = coef[N_COEF - 1];
    for (int j = N_COEF - 2; j >= 0; j--)
        f = f * t + coef[j];
    return f;
}

/* Per-edge draw: leaf decision against packed integer thresholds
 * (low word: certain leaf if h32 <= lo, high word: certain split if
 * h32 > hi), low hash bits stashed as u1 for the first split round. */
static void
pass_leaf(int64_t n, uint64_t s1, uint64_t s2, uint64_t basebits,
          const uint64_t *restrict pk, const double *restrict th2,
          const uint64_t *restrict thr, double scale,
          double *restrict u1, uint8_t *restrict kind,
          uint8_t *restrict gray)
{
    for (int64_t i = 0; i < n; i++) {
        uint64_t h = mix2(pk[i] + basebits, s1, s2);
        uint64_t h32 = h >> 32;
        int64_t it = (int64_t)(th2[i] * scale);
        uint64_t tw = thr[it];
        uint64_t lf = h32 <= (tw & 0xFFFFFFFFULL);
        uint64_t sp = h32 > (tw >> 32);
        u1[i] = ((double)(h & 0xFFFFFFFFULL) + 0.5) * INV32;
        kind[i] = (uint8_t)(1 - lf);
        gray[i] = (uint8_t)(1 - (lf | sp));
    }
}

/* First split round: u1 comes from the entry hash, one fresh hash at
 * the reserved partner index gives (u2, u3).  gtab holds (min, max) of
 * F/z_c per interval, so the accept test u3 * z_c^2 < F(ta) F(tb)
 * screens as u3 vs a product of two gathered bounds. */
static void
pass_split1(int64_t n, uint64_t s1, uint64_t s2, uint64_t basebits,
            const uint64_t *restrict spk, const double *restrict sth2,
            const double *restrict su1, const double *restrict gtab,
            double scale, double pi2,
            double *restrict sa, double *restrict sb,
            uint8_t *restrict macc, uint8_t *restrict mgray)
{
    for (int64_t j = 0; j < n; j++) {
        uint64_t h = mix2(spk[j] + basebits, s1, s2);
        double u2 = ((double)(h >> 32) + 0.5) * INV32;
        double u3 = ((double)(h & 0xFFFFFFFFULL) + 0.5) * INV32;
        double t2v = sth2[j];
        double s = sqrt(t2v + su1[j] * (pi2 - t2v));
        double a = u2 * s;
        double b = s - a;
        double ta = a * a;
        double tb = b * b;
        int64_t ia = (int64_t)(ta * scale);
        int64_t ib = (int64_t)(tb * scale);
        double plo = gtab[2 * ia] * gtab[2 * ib];
        double pup = gtab[2 * ia + 1] * gtab[2 * ib + 1];
        uint64_t acc = u3 < plo;
        uint64_t rej = u3 >= pup;
        sa[j] = a;
        sb[j] = b;
        macc[j] = (uint8_t)acc;
        mgray[j] = (uint8_t)(1 - (acc | rej));
    }
}

/* Later rounds: two hashes per slot, (u1, u2) from the first and u3
 * from the second, matching the numba draw layout exactly. */
static void
pass_splitk(int64_t n, uint64_t s1, uint64_t s2, uint64_t basebits,
            const uint64_t *restrict spk, const double *restrict sth2,
            const double *restrict gtab, double scale, double pi2,
            double *restrict sa, double *restrict sb,
            uint8_t *restrict macc, uint8_t *restrict mgray)
{
    for (int64_t j = 0; j < n; j++) {
        uint64_t z = spk[j] + basebits;
        uint64_t ha = mix2(z, s1, s2);
        uint64_t hb = mix2(z + 1, s1, s2);
        double u1v = ((double)(ha >> 32) + 0.5) * INV32;
        double u2 = ((double)(ha & 0xFFFFFFFFULL) + 0.5) * INV32;
        double u3 = ((double)(hb >> 32) + 0.5) * INV32;
        double t2v = sth2[j];
        double s = sqrt(t2v + u1v * (pi2 - t2v));
        double a = u2 * s;
        double b = s - a;
        double ta = a * a;
        double tb = b * b;
        int64_t ia = (int64_t)(ta * scale);
        int64_t ib = (int64_t)(tb * scale);
        double plo = gtab[2 * ia] * gtab[2 * ib];
        double pup = gtab[2 * ia + 1] * gtab[2 * ib + 1];
        uint64_t acc = u3 < plo;
        uint64_t rej = u3 >= pup;
        sa[j] = a;
        sb[j] = b;
        macc[j] = (uint8_t)acc;
        mgray[j] = (uint8_t)(1 - (acc | rej));
    }
}

typedef struct {
    const int64_t *targets;
    const double *coef;
    const uint64_t *thr;
    const double *gtab;
    double *th2_a, *th2_b;
    uint64_t *pk_a, *pk_b;
    double *u1;
    uint8_t *kind, *gray;
    double *aw, *bw;
    int64_t *em, *sidx;
    uint64_t *spk;
    double *sth2, *su1;
    double *sa, *sb;
    uint8_t *macc, *mgray;
    uint64_t *cnt;
    uint8_t *dead;
    int64_t *kctr;
    int64_t *win_trial, *win_size;
    uint8_t *log_kind;
    double *log_a, *log_b;
    int64_t *log_wlen;
    int64_t n_targets, cap_f, cap_log, cap_wlen;
    uint64_t s1, s2;
    int64_t base, bsize;
    int log_mode;
    double x_c, z_c;
} wave_state;

/* Returns frontier entries, or -1 when a scratch array would overflow
 * (caller retries the same trial range with bigger scratch). */
static int64_t
engine_core(wave_state *G, int64_t *out_nwin, int64_t *out_nwave)
{
    const int64_t cap = G->targets[G->n_targets - 1] - 1;
    const double pi2 = M_PI * M_PI;
    const double scale = 256.0 / pi2;
    const double zc2 = G->z_c * G->z_c;
    const uint64_t basebits = (uint64_t)G->base << 24;
    double *th2_a = G->th2_a, *th2_b = G->th2_b;
    uint64_t *pk_a = G->pk_a, *pk_b = G->pk_b;
    int64_t nwin = 0, nwave = 0, entries = 0, lg = 0;

    for (int64_t t = 0; t < G->bsize; t++) {
        G->cnt[t] = 1; /* leaves << 32 | pending */
        G->dead[t] = 0;
        G->kctr[t] = 2; /* indices 0, 1 are the root edge's pair */
    }
    for (int64_t i = 0; i < G->bsize; i++) {
        th2_a[i] = 0.0;
        pk_a[i] = (uint64_t)i << 24;
    }
    int64_t w_sz = G->bsize;

    while (w_sz > 0) {
        entries += w_sz;

        pass_leaf(w_sz, G->s1, G->s2, basebits, pk_a, th2_a,
                  G->thr, scale, G->u1, G->kind, G->gray);

        /* screen misses: the exact polynomial decides */
        {
            int64_t i = 0;
            for (; i + 8 <= w_sz; i += 8) {
                uint64_t chunk;
                memcpy(&chunk, G->gray + i, 8);
                if (!chunk)
                    continue;
                for (int bb = 0; bb < 8; bb++)
                    if (G->gray[i + bb]) {
                        int64_t ii = i + bb;
                        uint64_t h = mix2(pk_a[ii] + basebits, G->s1, G->s2);
                        double ul = ((double)(h >> 32) + 0.5) * INV32;
                        double f1 = horner(G->coef, th2_a[ii]);
                        G->kind[ii] = (uint8_t)(1 - (ul * f1 < G->x_c));
                    }
            }
            for (; i < w_sz; i++)
                if (G->gray[i]) {
                    uint64_t h = mix2(pk_a[i] + basebits, G->s1, G->s2);
                    double ul = ((double)(h >> 32) + 0.5) * INV32;
                    double f1 = horner(G->coef, th2_a[i]);
                    G->kind[i] = (uint8_t)(1 - (ul * f1 < G->x_c));
                }
        }

        /* counters, dooming, winner check, split payload.  Splits are
         * compacted with unconditional stores and an arithmetic
         * advance: a 46/54 branch here would mispredict almost every
         * other entry.  The round-1 draw index is the edge's own plus
         * one, so no allocation happens in this loop at all. */
        int64_t ns = 0;
        for (int64_t i = 0; i < w_sz; i++) {
            uint64_t pkv = pk_a[i];
            int64_t t = (int64_t)(pkv >> 24);
            int64_t isl = 1 - (int64_t)G->kind[i];
            uint64_t w = G->cnt[t]
                         + (((uint64_t)isl << 32) + (uint64_t)(1 - 2 * isl));
            G->cnt[t] = w;
            int64_t lc = (int64_t)(w >> 32);
            int64_t p = (int64_t)(w & 0xFFFFFFFFULL);
            if (lc + p > cap) {
                G->dead[t] = 1;
            } else if (p == 0 && G->dead[t] == 0) {
                int64_t num = lc + 1;
                for (int64_t j = 0; j < G->n_targets; j++)
                    if (G->targets[j] == num) {
                        G->win_trial[nwin] = G->base + t;
                        G->win_size[nwin] = num;
                        nwin++;
                        break;
                    }
            }
            G->sidx[ns] = i;
            G->spk[ns] = pkv + 1;
            G->sth2[ns] = th2_a[i];
            G->su1[ns] = G->u1[i];
            ns += 1 - isl;
        }

        /* rejection rounds on the shrinking set; sidx stays pristine
         * for the emission scan, the working slot list moves to em */
        int64_t nw = ns;
        int first = 1;
        const int64_t *cur = G->sidx;
        while (nw > 0) {
            if (first)
                pass_split1(nw, G->s1, G->s2, basebits, G->spk,
                            G->sth2, G->su1, G->gtab, scale, pi2,
                            G->sa, G->sb, G->macc, G->mgray);
            else
                pass_splitk(nw, G->s1, G->s2, basebits, G->spk,
                            G->sth2, G->gtab, scale, pi2,
                            G->sa, G->sb, G->macc, G->mgray);
            for (int64_t j = 0; j < nw; j++)
                if (G->mgray[j]) {
                    uint64_t z = G->spk[j] + basebits;
                    double u3;
                    if (first) {
                        uint64_t h = mix2(z, G->s1, G->s2);
                        u3 = ((double)(h & 0xFFFFFFFFULL) + 0.5) * INV32;
                    } else {
                        uint64_t hb = mix2(z + 1, G->s1, G->s2);
                        u3 = ((double)(hb >> 32) + 0.5) * INV32;
                    }
                    double ta = G->sa[j] * G->sa[j];
                    double tb = G->sb[j] * G->sb[j];
                    double w = u3 * zc2;
                    double f1 = horner(G->coef, ta);
                    double f2 = horner(G->coef, tb);
                    G->macc[j] = (uint8_t)(w < f1 * f2);
                }
            /* accepted slots get their angles scattered home (a stale
             * write for rejected ones is harmless, the slot is still
             * in play and will be overwritten on its real accept);
             * rejected ones are compacted branch-free with the next
             * round's draw pair spliced into their packed word. */
            int64_t nr = 0;
            for (int64_t j = 0; j < nw; j++) {
                int64_t slot = cur[j];
                uint64_t spkv = G->spk[j];
                int64_t t = (int64_t)(spkv >> 24);
                G->aw[slot] = G->sa[j];
                G->bw[slot] = G->sb[j];
                int64_t rej = 1 - (int64_t)G->macc[j];
                int64_t k = G->kctr[t];
                G->em[nr] = slot;
                G->spk[nr] = (spkv & TRIAL_MASK) | (uint64_t)k;
                G->sth2[nr] = G->sth2[j];
                if (k + 2 >= K_CAP) {
                    G->dead[t] |= (uint8_t)rej;
                    rej = 0;
                }
                G->kctr[t] = k + 2 * rej;
                nr += rej;
            }
            nw = nr;
            cur = G->em;
            first = 0;
        }

        /* logging (single-trial replays only) */
        if (G->log_mode == 1) {
            if (lg + w_sz > G->cap_log || nwave >= G->cap_wlen)
                return -1;
            for (int64_t i = 0; i < w_sz; i++) {
                if (G->kind[i] == 0) {
                    G->log_kind[lg] = 0;
                    G->log_a[lg] = NAN;
                    G->log_b[lg] = NAN;
                } else {
                    G->log_kind[lg] = 1;
                    G->log_a[lg] = G->aw[i];
                    G->log_b[lg] = G->bw[i];
                }
                lg++;
            }
            G->log_wlen[nwave] = w_sz;
        }

        /* next frontier: children of surviving splits, left child
         * first; each child's (leaf, round-1) index pair is reserved
         * here, in slot order, which is exactly the order the next
         * wave consumes them */
        if (2 * ns > G->cap_f)
            return -1;
        int64_t w_nxt = 0;
        for (int64_t jj = 0; jj < ns; jj++) {
            int64_t i = G->sidx[jj];
            uint64_t pkv = pk_a[i];
            int64_t t = (int64_t)(pkv >> 24);
            if (G->dead[t] == 0) {
                int64_t k = G->kctr[t];
                if (k + 4 > K_CAP) {
                    G->dead[t] = 1;
                    continue;
                }
                G->kctr[t] = k + 4;
                double b = G->bw[i];
                double a = G->aw[i];
                uint64_t tk = pkv & TRIAL_MASK;
                pk_b[w_nxt] = tk | (uint64_t)k;
                th2_b[w_nxt] = b * b;
                pk_b[w_nxt + 1] = tk | (uint64_t)(k + 2);
                th2_b[w_nxt + 1] = a * a;
                w_nxt += 2;
            }
        }
        double *tf = th2_a; th2_a = th2_b; th2_b = tf;
        uint64_t *tp = pk_a; pk_a = pk_b; pk_b = tp;
        w_sz = w_nxt;
        nwave++;
    }

    *out_nwin = nwin;
    *out_nwave = nwave;
    return entries;
}

static PyObject *
wavec_run_batch(PyObject *self, PyObject *args)
{
    unsigned long long seed1, seed2;
    long long trial_base, bsize;
    int log_mode;
    double x_c, z_c;
    PyObject *arrs;

    if (!PyArg_ParseTuple(args, "KKLLiddO", &seed1, &seed2, &trial_base,
                          &bsize, &log_mode, &x_c, &z_c, &arrs))
        return NULL;
    PyObject *fast = PySequence_Fast(arrs, "run_batch: arrays");
    if (!fast)
        return NULL;
    if (PySequence_Fast_GET_SIZE(fast) != 31) {
        Py_DECREF(fast);
        PyErr_SetString(PyExc_ValueError, "run_batch: expected 31 arrays");
        return NULL;
    }
    for (int i = 0; i < 31; i++) {
        PyObject *o = PySequence_Fast_GET_ITEM(fast, i);
        if (!PyArray_Check(o)
            || !PyArray_ISCARRAY_RO((PyArrayObject *)o)) {
            Py_DECREF(fast);
            PyErr_Format(PyExc_TypeError,
                         "run_batch: array %d must be C contiguous", i);
            return NULL;
        }
    }

#define DAT(i, T) ((T *)PyArray_DATA((PyArrayObject *)PySequence_Fast_GET_ITEM(fast, i)))
#define LEN(i) (PyArray_DIM((PyArrayObject *)PySequence_Fast_GET_ITEM(fast, i), 0))

    wave_state G;
    G.targets = DAT(0, const int64_t);
    G.coef = DAT(1, const double);
    G.thr = DAT(2, const uint64_t);
    G.gtab = DAT(3, const double);
    G.th2_a = DAT(4, double);
    G.pk_a = DAT(5, uint64_t);
    G.th2_b = DAT(6, double);
    G.pk_b = DAT(7, uint64_t);
    G.u1 = DAT(8, double);
    G.kind = DAT(9, uint8_t);
    G.gray = DAT(10, uint8_t);
    G.aw = DAT(11, double);
    G.bw = DAT(12, double);
    G.em = DAT(13, int64_t);
    G.sidx = DAT(14, int64_t);
    G.spk = DAT(15, uint64_t);
    G.sth2 = DAT(16, double);
    G.su1 = DAT(17, double);
    G.sa = DAT(18, double);
    G.sb = DAT(19, double);
    G.macc = DAT(20, uint8_t);
    G.mgray = DAT(21, uint8_t);
    G.cnt = DAT(22, uint64_t);
    G.dead = DAT(23, uint8_t);
    G.kctr = DAT(24, int64_t);
    G.win_trial = DAT(25, int64_t);
    G.win_size = DAT(26, int64_t);
    G.log_kind = DAT(27, uint8_t);
    G.log_a = DAT(28, double);
    G.log_b = DAT(29, double);
    G.log_wlen = DAT(30, int64_t);
    G.n_targets = LEN(0);
    G.cap_f = LEN(4);
    G.cap_log = LEN(27);
    G.cap_wlen = LEN(30);
    G.s1 = (uint64_t)seed1;
    G.s2 = (uint64_t)seed2;
    G.base = (int64_t)trial_base;
    G.bsize = (int64_t)bsize;
    G.log_mode = log_mode;
    G.x_c = x_c;
    G.z_c = z_c;

    if (LEN(1) != N_COEF || LEN(2) != 257 || LEN(3) != 514
        || G.n_targets < 1 || bsize < 1 || LEN(22) < bsize
        || LEN(23) < bsize || LEN(24) < bsize || LEN(25) < bsize
        || G.cap_f < 2 * bsize) {
        Py_DECREF(fast);
        PyErr_SetString(PyExc_ValueError, "run_batch: bad array shapes");
        return NULL;
    }

    int64_t nwin = 0, nwave = 0, entries;
    Py_BEGIN_ALLOW_THREADS
    entries = engine_core(&G, &nwin, &nwave);
    Py_END_ALLOW_THREADS

    Py_DECREF(fast);
    return Py_BuildValue("(LLL)", (long long)nwin, (long long)nwave,
                         (long long)entries);

#undef DAT
#undef LEN
}

static PyObject *
wavec_features(PyObject *self, PyObject *noargs)
{
#if defined(__AVX512F__)
    return PyUnicode_FromString("avx512");
#elif defined(__AVX2__)
    return PyUnicode_FromString("avx2");
#else
    return PyUnicode_FromString("scalar");
#endif
}

static PyMethodDef wavec_methods[] = {
    {"run_batch", wavec_run_batch, METH_VARARGS,
     "run_batch(seed1, seed2, trial_base, bsize, log_mode, x_c, z_c, "
     "arrays) -> (winners, waves, entries)"},
    {"features", wavec_features, METH_NOARGS,
     "Vector ISA the module was compiled for."},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef wavec_module = {
    PyModuleDef_HEAD_INIT, "_wavec",
    "Vectorized scan engine; see _kernel for the reference kernel.",
    -1, wavec_methods,
};

PyMODINIT_FUNC
PyInit__wavec(void)
{
    import_array();
    return PyModule_Create(&wavec_module);
}
