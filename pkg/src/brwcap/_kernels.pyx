# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling kernels.

Mirrors brwcap._kernels_py draw for draw; see that module for the protocol.
Both backends produce bit-identical statistics for the same task keys.
"""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint64_t

cdef extern from *:
    ctypedef unsigned long long uint128_t "unsigned __int128"

BACKEND = "cython"

DEF MAXD = 16

cdef double _INV53 = 1.0 / 9007199254740992.0

cdef uint64_t _M0 = 0xD2E7470EE14C6C93ULL
cdef uint64_t _M1 = 0xCA5A826395121157ULL
cdef uint64_t _W0 = 0x9E3779B97F4A7C15ULL
cdef uint64_t _W1 = 0xBB67AE8584CAA73BULL

_CLONE_SALT = 0xB5297A4D3F84D5A9


# --------------------------------------------------------------------------
# Philox4x64-10, matching numpy.random.Philox output order exactly

cdef struct Philox:
    uint64_t k0, k1
    uint64_t c0, c1, c2, c3
    uint64_t buf[4]
    int pos


cdef inline void ph_init(Philox* s, uint64_t k0, uint64_t k1):
    s.k0 = k0
    s.k1 = k1
    s.c0 = 0
    s.c1 = 0
    s.c2 = 0
    s.c3 = 0
    s.pos = 4


cdef inline void ph_block(Philox* s):
    cdef uint64_t x0, x1, x2, x3, k0, k1, hi0, lo0, hi1, lo1
    cdef int r
    s.c0 += 1
    if s.c0 == 0:
        s.c1 += 1
        if s.c1 == 0:
            s.c2 += 1
            if s.c2 == 0:
                s.c3 += 1
    x0 = s.c0; x1 = s.c1; x2 = s.c2; x3 = s.c3
    k0 = s.k0; k1 = s.k1
    for r in range(10):
        lo0 = _M0 * x0
        hi0 = <uint64_t>((<uint128_t>_M0 * x0) >> 64)
        lo1 = _M1 * x2
        hi1 = <uint64_t>((<uint128_t>_M1 * x2) >> 64)
        x0 = hi1 ^ x1 ^ k0
        x1 = lo1
        x2 = hi0 ^ x3 ^ k1
        x3 = lo0
        k0 += _W0
        k1 += _W1
    s.buf[0] = x0; s.buf[1] = x1; s.buf[2] = x2; s.buf[3] = x3
    s.pos = 0


cdef inline uint64_t ph_next64(Philox* s):
    if s.pos >= 4:
        ph_block(s)
    s.pos += 1
    return s.buf[s.pos - 1]


cdef inline double ph_double(Philox* s):
    return <double>(ph_next64(s) >> 11) * _INV53


cdef inline uint64_t splitmix64(uint64_t z):
    z = z + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


# --------------------------------------------------------------------------
# engine: RNG + DFS stack + up to two point tables + action buffers

cdef int ACT_NONE = 0
cdef int ACT_HIT = 1
cdef int ACT_COUNT = 2
cdef int ACT_PHI = 3
cdef int ACT_ENTRY = 4

cdef int ST_OK = 0
cdef int ST_STOP = 1
cdef int ST_ABORT = 2


cdef class Engine:
    cdef Philox rng
    cdef int d
    cdef double r2_kill
    cdef long long budget
    # primary table
    cdef int64_t[:, ::1] a_co
    cdef int32_t[::1] a_val
    cdef uint64_t a_mask
    cdef int64_t a_lo[MAXD]
    cdef int64_t a_hi[MAXD]
    cdef bint a_empty
    # secondary (future) table
    cdef int64_t[:, ::1] f_co
    cdef int32_t[::1] f_val
    cdef uint64_t f_mask
    cdef int64_t f_lo[MAXD]
    cdef int64_t f_hi[MAXD]
    cdef bint f_empty
    # cdf tables
    cdef double[::1] mu_cdf
    cdef double[::1] adj_cdf
    cdef double[::1] split_cdf
    cdef int64_t[::1] split_kp
    cdef int64_t[::1] split_kf
    # DFS stack
    cdef object _spos_arr, _spend_arr
    cdef int64_t[:, ::1] spos
    cdef int32_t[::1] spend
    cdef int cap, sp
    # action state
    cdef object _counts_arr
    cdef int64_t[::1] counts
    cdef double[::1] phi_vals
    cdef double phi_acc
    cdef int entry
    cdef bint hitflag

    def __init__(self, int d):
        self.d = d
        self.r2_kill = -1.0
        self.cap = 4096
        self._spos_arr = np.zeros((self.cap, d), dtype=np.int64)
        self._spend_arr = np.zeros(self.cap, dtype=np.int32)
        self.spos = self._spos_arr
        self.spend = self._spend_arr
        self.sp = 0
        self.a_empty = True
        self.f_empty = True
        self.entry = -1
        self.hitflag = False
        self.phi_acc = 0.0

    cdef void set_table_a(self, table):
        cdef int j
        if table is None or table.n == 0:
            self.a_empty = True
            return
        self.a_empty = False
        self.a_co = table.coords
        self.a_val = table.vals
        self.a_mask = <uint64_t>table.mask
        for j in range(self.d):
            self.a_lo[j] = table.lo[j]
            self.a_hi[j] = table.hi[j]

    cdef void set_table_f(self, table):
        cdef int j
        if table is None or table.n == 0:
            self.f_empty = True
            return
        self.f_empty = False
        self.f_co = table.coords
        self.f_val = table.vals
        self.f_mask = <uint64_t>table.mask
        for j in range(self.d):
            self.f_lo[j] = table.lo[j]
            self.f_hi[j] = table.hi[j]

    cdef void set_counts(self, int n):
        self._counts_arr = np.zeros(n, dtype=np.int64)
        self.counts = self._counts_arr

    cdef void grow_stack(self):
        cdef int newcap = self.cap * 2
        pos2 = np.zeros((newcap, self.d), dtype=np.int64)
        pend2 = np.zeros(newcap, dtype=np.int32)
        pos2[:self.cap] = self._spos_arr
        pend2[:self.cap] = self._spend_arr
        self._spos_arr = pos2
        self._spend_arr = pend2
        self.spos = pos2
        self.spend = pend2
        self.cap = newcap

    cdef inline int probe_a(self, int64_t* pos):
        cdef int j
        cdef uint64_t h, i
        cdef int32_t v
        cdef bint ok
        if self.a_empty:
            return -1
        for j in range(self.d):
            if pos[j] < self.a_lo[j] or pos[j] > self.a_hi[j]:
                return -1
        h = 0x9E3779B97F4A7C15ULL
        for j in range(self.d):
            h = splitmix64(h ^ (<uint64_t>pos[j]))
        i = h & self.a_mask
        while True:
            v = self.a_val[i]
            if v < 0:
                return -1
            ok = True
            for j in range(self.d):
                if self.a_co[i, j] != pos[j]:
                    ok = False
                    break
            if ok:
                return v
            i = (i + 1) & self.a_mask

    cdef inline int probe_f(self, int64_t* pos):
        cdef int j
        cdef uint64_t h, i
        cdef int32_t v
        cdef bint ok
        if self.f_empty:
            return -1
        for j in range(self.d):
            if pos[j] < self.f_lo[j] or pos[j] > self.f_hi[j]:
                return -1
        h = 0x9E3779B97F4A7C15ULL
        for j in range(self.d):
            h = splitmix64(h ^ (<uint64_t>pos[j]))
        i = h & self.f_mask
        while True:
            v = self.f_val[i]
            if v < 0:
                return -1
            ok = True
            for j in range(self.d):
                if self.f_co[i, j] != pos[j]:
                    ok = False
                    break
            if ok:
                return v
            i = (i + 1) & self.f_mask

    cdef inline void step_into(self, int64_t* src, int64_t* dst):
        cdef int j
        cdef double u = ph_double(&self.rng)
        cdef int jj = <int>(u * 2 * self.d)
        for j in range(self.d):
            dst[j] = src[j]
        if (jj & 1) == 0:
            dst[jj >> 1] += 1
        else:
            dst[jj >> 1] -= 1

    cdef inline void step_inplace(self, int64_t* pos):
        cdef double u = ph_double(&self.rng)
        cdef int jj = <int>(u * 2 * self.d)
        if (jj & 1) == 0:
            pos[jj >> 1] += 1
        else:
            pos[jj >> 1] -= 1

    cdef inline int draw_count(self, double[::1] cdf):
        cdef double u = ph_double(&self.rng)
        cdef int k = 0
        cdef int last = cdf.shape[0] - 1
        while k < last and u >= cdf[k]:
            k += 1
        return k

    cdef inline void draw_split(self, int* kp, int* kf):
        cdef double u = ph_double(&self.rng)
        cdef int k = 0
        cdef int last = self.split_cdf.shape[0] - 1
        while k < last and u >= self.split_cdf[k]:
            k += 1
        kp[0] = <int>self.split_kp[k]
        kf[0] = <int>self.split_kf[k]

    cdef inline double norm2(self, int64_t* pos):
        cdef double s = 0.0
        cdef int j
        for j in range(self.d):
            s += <double>(pos[j] * pos[j])
        return s

    cdef inline int visit(self, int64_t* pos, int action):
        """Charge the node budget and perform the action; ST_* result."""
        cdef int v
        self.budget -= 1
        if self.budget < 0:
            return ST_ABORT
        if action == ACT_HIT:
            if self.probe_a(pos) >= 0:
                self.hitflag = True
                return ST_STOP
        elif action == ACT_COUNT:
            v = self.probe_a(pos)
            if v >= 0:
                self.counts[v] += 1
        elif action == ACT_PHI:
            v = self.probe_a(pos)
            if v >= 0:
                self.phi_acc += self.phi_vals[v]
        elif action == ACT_ENTRY:
            if self.entry < 0:
                v = self.probe_f(pos)
                if v >= 0:
                    self.entry = v
        return ST_OK

    cdef int subtree(self, int64_t* root, double[::1] root_cdf, int action):
        """Visit root, then DFS its offspring; lineages die outside the ball."""
        cdef int st, k, j
        cdef int64_t* parent
        cdef int64_t* child
        st = self.visit(root, action)
        if st != ST_OK:
            return st
        if self.r2_kill >= 0 and self.norm2(root) > self.r2_kill:
            return ST_OK
        self.sp = 0
        if self.sp >= self.cap:
            self.grow_stack()
        for j in range(self.d):
            self.spos[0, j] = root[j]
        self.spend[0] = <int32_t>self.draw_count(root_cdf)
        self.sp = 1
        while self.sp > 0:
            if self.spend[self.sp - 1] == 0:
                self.sp -= 1
                continue
            self.spend[self.sp - 1] -= 1
            if self.sp >= self.cap:
                self.grow_stack()
            parent = &self.spos[self.sp - 1, 0]
            child = &self.spos[self.sp, 0]
            self.step_into(parent, child)
            st = self.visit(child, action)
            if st != ST_OK:
                return st
            if self.r2_kill >= 0 and self.norm2(child) > self.r2_kill:
                continue
            self.spend[self.sp] = <int32_t>self.draw_count(self.mu_cdf)
            self.sp += 1
        return ST_OK

    cdef int subtree_block(self, int64_t* parent, int count,
                           double[::1] root_cdf, int action):
        cdef int t, st
        cdef int64_t child[MAXD]
        for t in range(count):
            self.step_into(parent, child)
            st = self.subtree(child, root_cdf, action)
            if st != ST_OK:
                return st
        return ST_OK

    cdef int past_loop(self, int64_t* x0, int action):
        """Spine + adjoint trees killed outside the ball; spec: past tree."""
        cdef int64_t pos[MAXD]
        cdef int j, st
        for j in range(self.d):
            pos[j] = x0[j]
        while True:
            self.step_inplace(pos)
            st = self.subtree(pos, self.adj_cdf, action)
            if st != ST_OK:
                return st
            if self.norm2(pos) > self.r2_kill:
                return ST_OK

    cdef int full_loop(self, int64_t* x0, int act_past, int act_future,
                       bint critical_only, bint lastpass):
        """Root (future) + spine (past) + hanging subtrees, one pass.

        With ``lastpass`` future blocks are skipped once the entry is known.
        """
        cdef int64_t pos[MAXD]
        cdef int j, st, kp, kf, kr
        for j in range(self.d):
            pos[j] = x0[j]
        st = self.visit(pos, act_future)
        if st != ST_OK:
            return st
        if self.norm2(pos) <= self.r2_kill:
            kr = self.draw_count(self.mu_cdf)
            if not (lastpass and self.entry >= 0):
                st = self.subtree_block(pos, kr, self.mu_cdf, act_future)
                if st != ST_OK:
                    return st
        if critical_only:
            return ST_OK
        while True:
            self.step_inplace(pos)
            st = self.visit(pos, act_past)
            if st != ST_OK:
                return st
            if self.norm2(pos) <= self.r2_kill:
                self.draw_split(&kp, &kf)
                st = self.subtree_block(pos, kp, self.mu_cdf, act_past)
                if st != ST_OK:
                    return st
                if not (lastpass and self.entry >= 0):
                    st = self.subtree_block(pos, kf, self.mu_cdf, act_future)
                    if st != ST_OK:
                        return st
            if self.norm2(pos) > self.r2_kill:
                return ST_OK


cdef void _load_x0(int64_t* buf, x0, int d):
    cdef int j
    for j in range(d):
        buf[j] = x0[j]


# --------------------------------------------------------------------------
# public kernels (signatures match brwcap._kernels_py)

def srw_visits(k0, rep0, nreps, int d, int horizon, table):
    cdef Engine e = Engine(d)
    e.set_table_a(table)
    cdef int nt = table.n
    sums_arr = np.zeros(nt, dtype=np.int64)
    sumsq_arr = np.zeros(nt, dtype=np.float64)
    cdef int64_t[::1] sums = sums_arr
    cdef double[::1] sumsq = sumsq_arr
    e.set_counts(nt)
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r
    cdef uint64_t stop = <uint64_t>(rep0 + nreps)
    cdef int64_t pos[MAXD]
    cdef int j, n, v
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        for j in range(d):
            pos[j] = 0
        for j in range(nt):
            e.counts[j] = 0
        v = e.probe_a(pos)
        if v >= 0:
            e.counts[v] += 1
        for n in range(horizon):
            e.step_inplace(pos)
            v = e.probe_a(pos)
            if v >= 0:
                e.counts[v] += 1
        for j in range(nt):
            sums[j] += e.counts[j]
            sumsq[j] += <double>e.counts[j] * <double>e.counts[j]
    return sums_arr, sumsq_arr


def tree_avoid(k0, rep0, nreps, int d, x0, bint root_adjoint,
               double[::1] mu_cdf, double[::1] adj_cdf, set_table,
               double r2_kill, long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.adj_cdf = adj_cdf
    e.set_table_a(set_table)
    e.r2_kill = r2_kill
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    cdef double[::1] root_cdf = adj_cdf if root_adjoint else mu_cdf
    cdef long long n_avoid = 0, n_hit = 0, n_abort = 0
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        e.hitflag = False
        st = e.subtree(root, root_cdf, ACT_HIT)
        if st == ST_ABORT:
            n_abort += 1
        elif e.hitflag:
            n_hit += 1
        else:
            n_avoid += 1
    return int(n_avoid), int(n_hit), int(n_abort)


def tree_visits(k0, rep0, nreps, int d, x0, bint root_adjoint,
                double[::1] mu_cdf, double[::1] adj_cdf, table,
                double r2_kill, long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.adj_cdf = adj_cdf
    e.set_table_a(table)
    e.r2_kill = r2_kill
    cdef int nt = table.n
    sums_arr = np.zeros(nt, dtype=np.int64)
    sumsq_arr = np.zeros(nt, dtype=np.float64)
    cdef int64_t[::1] sums = sums_arr
    cdef double[::1] sumsq = sumsq_arr
    e.set_counts(nt)
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    cdef double[::1] root_cdf = adj_cdf if root_adjoint else mu_cdf
    cdef long long n_abort = 0
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st, j
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        for j in range(nt):
            e.counts[j] = 0
        st = e.subtree(root, root_cdf, ACT_COUNT)
        if st == ST_ABORT:
            n_abort += 1
            continue
        for j in range(nt):
            sums[j] += e.counts[j]
            sumsq[j] += <double>e.counts[j] * <double>e.counts[j]
    return sums_arr, sumsq_arr, int(n_abort)


def tree_first_entry(k0, rep0, nreps, int d, x0, double[::1] mu_cdf,
                     set_table, int64_t[:, ::1] gamma, long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.set_table_a(set_table)
    e.r2_kill = -1.0
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    cdef long long n_hit = 0, n_match = 0, n_abort = 0
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int glen = gamma.shape[0]
    cdef int j, k, depth
    cdef bint found, match, aborted
    cdef int64_t* parent
    cdef int64_t* child
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        found = False
        match = False
        aborted = False
        depth = 0
        e.budget -= 1
        if e.budget < 0:
            n_abort += 1
            continue
        if e.probe_a(root) >= 0:
            found = True
            match = (glen == 1)
            for j in range(d):
                if glen == 1 and gamma[0, j] != root[j]:
                    match = False
        else:
            for j in range(d):
                e.spos[0, j] = root[j]
            e.spend[0] = <int32_t>e.draw_count(mu_cdf)
            e.sp = 1
            while e.sp > 0:
                if e.spend[e.sp - 1] == 0:
                    e.sp -= 1
                    continue
                e.spend[e.sp - 1] -= 1
                if e.sp >= e.cap:
                    e.grow_stack()
                parent = &e.spos[e.sp - 1, 0]
                child = &e.spos[e.sp, 0]
                e.step_into(parent, child)
                e.budget -= 1
                if e.budget < 0:
                    aborted = True
                    break
                if e.probe_a(child) >= 0:
                    found = True
                    # root path = stack rows [0, sp) plus the child
                    if e.sp + 1 == glen:
                        match = True
                        for k in range(e.sp):
                            for j in range(d):
                                if gamma[k, j] != e.spos[k, j]:
                                    match = False
                                    break
                            if not match:
                                break
                        if match:
                            for j in range(d):
                                if gamma[e.sp, j] != child[j]:
                                    match = False
                                    break
                    break
                e.spend[e.sp] = <int32_t>e.draw_count(mu_cdf)
                e.sp += 1
        if aborted:
            n_abort += 1
        else:
            if found:
                n_hit += 1
                if match:
                    n_match += 1
    return int(n_hit), int(n_match), int(n_abort)


def tree_height_tail(k0, rep0, nreps, double[::1] mu_cdf, int hgate,
                     long long max_nodes):
    cdef Philox rng
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef long long n_reach = 0, n_abort = 0, nodes
    cdef int cap = 4096, sp, k, last
    pend_arr = np.zeros(cap, dtype=np.int32)
    cdef int32_t[::1] pend = pend_arr
    cdef double u
    cdef int reached
    for r in range(<uint64_t>rep0, stop):
        ph_init(&rng, key0, r)
        if hgate <= 0:
            n_reach += 1
            continue
        nodes = 1
        # inline count draw (no spatial draws in this kernel)
        u = ph_double(&rng)
        k = 0
        last = mu_cdf.shape[0] - 1
        while k < last and u >= mu_cdf[k]:
            k += 1
        pend[0] = <int32_t>k
        sp = 1
        reached = 0
        while sp > 0:
            if pend[sp - 1] == 0:
                sp -= 1
                continue
            pend[sp - 1] -= 1
            nodes += 1
            if nodes > max_nodes:
                reached = 2
                break
            if sp >= hgate:
                reached = 1
                break
            if sp >= cap:
                cap *= 2
                pend2 = np.zeros(cap, dtype=np.int32)
                pend2[:sp] = pend_arr[:sp]
                pend_arr = pend2
                pend = pend_arr
            u = ph_double(&rng)
            k = 0
            while k < last and u >= mu_cdf[k]:
                k += 1
            pend[sp] = <int32_t>k
            sp += 1
        if reached == 1:
            n_reach += 1
        elif reached == 2:
            n_abort += 1
    return int(n_reach), int(n_abort)


def past_avoid(k0, rep0, nreps, int d, x0, double[::1] mu_cdf,
               double[::1] adj_cdf, set_table, double r2_trunc,
               long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.adj_cdf = adj_cdf
    e.set_table_a(set_table)
    e.r2_kill = r2_trunc
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    cdef long long n_avoid = 0, n_hit = 0, n_abort = 0
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        e.hitflag = False
        st = e.past_loop(root, ACT_HIT)
        if st == ST_ABORT:
            n_abort += 1
        elif e.hitflag:
            n_hit += 1
        else:
            n_avoid += 1
    return int(n_avoid), int(n_hit), int(n_abort)


def past_visits(k0, rep0, nreps, int d, x0, double[::1] mu_cdf,
                double[::1] adj_cdf, table, double r2_trunc,
                long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.adj_cdf = adj_cdf
    e.set_table_a(table)
    e.r2_kill = r2_trunc
    cdef int nt = table.n
    sums_arr = np.zeros(nt, dtype=np.int64)
    sumsq_arr = np.zeros(nt, dtype=np.float64)
    cdef int64_t[::1] sums = sums_arr
    cdef double[::1] sumsq = sumsq_arr
    e.set_counts(nt)
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    cdef long long n_abort = 0
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st, j
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        for j in range(nt):
            e.counts[j] = 0
        st = e.past_loop(root, ACT_COUNT)
        if st == ST_ABORT:
            n_abort += 1
            continue
        for j in range(nt):
            sums[j] += e.counts[j]
            sumsq[j] += <double>e.counts[j] * <double>e.counts[j]
    return sums_arr, sumsq_arr, int(n_abort)


def full_lastpassage(k0, rep0, nreps, int d, x0, double[::1] mu_cdf,
                     double[::1] split_cdf, int64_t[::1] split_kp,
                     int64_t[::1] split_kf, past_table, future_table,
                     double r2_trunc, long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.split_cdf = split_cdf
    e.split_kp = split_kp
    e.split_kf = split_kf
    e.set_table_a(past_table)
    e.set_table_f(future_table)
    e.r2_kill = r2_trunc
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    cdef long long n_event = 0, n_past_avoid = 0, n_abort = 0
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        e.hitflag = False
        e.entry = -1
        st = e.full_loop(root, ACT_HIT, ACT_ENTRY, False, True)
        if st == ST_ABORT:
            n_abort += 1
            continue
        if not e.hitflag:
            n_past_avoid += 1
            if e.entry == 1:
                n_event += 1
    return int(n_event), int(n_past_avoid), int(n_abort)


def full_phi_sum(k0, rep0, nreps, int d, x0, double[::1] mu_cdf,
                 double[::1] split_cdf, int64_t[::1] split_kp,
                 int64_t[::1] split_kf, phi_table, double[::1] phi_vals,
                 double r2_trunc, long long max_nodes, bint critical_only):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.split_cdf = split_cdf
    e.split_kp = split_kp
    e.split_kf = split_kf
    e.set_table_a(phi_table)
    e.phi_vals = phi_vals
    e.r2_kill = r2_trunc
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    sums_arr = np.zeros(nreps, dtype=np.float64)
    ab_arr = np.zeros(nreps, dtype=bool)
    cdef double[::1] sums = sums_arr
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st
    cdef Py_ssize_t i = 0
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        e.phi_acc = 0.0
        st = e.full_loop(root, ACT_PHI, ACT_PHI, critical_only, False)
        if st == ST_ABORT:
            ab_arr[i] = True
        sums[i] = e.phi_acc
        i += 1
    return sums_arr, ab_arr


def full_localtime(k0, rep0, nreps, int d, x0, double[::1] mu_cdf,
                   double[::1] split_cdf, int64_t[::1] split_kp,
                   int64_t[::1] split_kf, set_table, int n_sets,
                   double r2_trunc, long long max_nodes):
    cdef Engine e = Engine(d)
    e.mu_cdf = mu_cdf
    e.split_cdf = split_cdf
    e.split_kp = split_kp
    e.split_kf = split_kf
    e.set_table_a(set_table)
    e.r2_kill = r2_trunc
    e.set_counts(n_sets)
    cdef int64_t root[MAXD]
    _load_x0(root, x0, d)
    counts_arr = np.zeros((nreps, n_sets), dtype=np.int64)
    ab_arr = np.zeros(nreps, dtype=bool)
    cdef int64_t[:, ::1] counts = counts_arr
    cdef uint64_t key0 = <uint64_t>k0
    cdef uint64_t r, stop = <uint64_t>(rep0 + nreps)
    cdef int st, j
    cdef Py_ssize_t i = 0
    for r in range(<uint64_t>rep0, stop):
        ph_init(&e.rng, key0, r)
        e.budget = max_nodes
        for j in range(n_sets):
            e.counts[j] = 0
        st = e.full_loop(root, ACT_COUNT, ACT_COUNT, False, False)
        if st == ST_ABORT:
            ab_arr[i] = True
        for j in range(n_sets):
            counts[i, j] = e.counts[j]
        i += 1
    return counts_arr, ab_arr


# --------------------------------------------------------------------------
# resumable grower for rare-event splitting (protocol = full_localtime)

cdef int G_LEVEL = 0
cdef int G_DONE = 1
cdef int G_ABORT = 2


cdef class LocaltimeGrower:
    cdef Engine e
    cdef object table, mu_cdf_o, split_cdf_o, split_kp_o, split_kf_o
    cdef int d, n_sets
    cdef double r2_trunc
    cdef int64_t spine[MAXD]
    cdef int64_t slot[MAXD]
    cdef int trees_rem
    cdef bint root_done, spine_exited
    cdef public bint finished, aborted
    cdef public object key0, key1

    def __init__(self, int d, x0, mu_cdf, split_cdf, split_kp, split_kf,
                 set_table, int n_sets, double r2_trunc, long long max_nodes,
                 key0, key1):
        self.d = d
        self.n_sets = n_sets
        self.r2_trunc = r2_trunc
        self.table = set_table
        self.mu_cdf_o = mu_cdf
        self.split_cdf_o = split_cdf
        self.split_kp_o = split_kp
        self.split_kf_o = split_kf
        self.e = Engine(d)
        self.e.mu_cdf = mu_cdf
        self.e.split_cdf = split_cdf
        self.e.split_kp = split_kp
        self.e.split_kf = split_kf
        self.e.set_table_a(set_table)
        self.e.r2_kill = r2_trunc
        self.e.set_counts(n_sets)
        self.e.budget = max_nodes
        self.key0 = key0
        self.key1 = key1
        ph_init(&self.e.rng, <uint64_t>key0, <uint64_t>key1)
        cdef int j
        for j in range(d):
            self.spine[j] = x0[j]
        self.trees_rem = 0
        self.root_done = False
        self.spine_exited = False
        self.finished = False
        self.aborted = False

    @property
    def counts(self):
        return np.asarray(self.e._counts_arr)

    def min_count(self):
        cdef int64_t m = self.e.counts[0]
        cdef int j
        for j in range(1, self.n_sets):
            if self.e.counts[j] < m:
                m = self.e.counts[j]
        return int(m)

    def clone(self, new_key1):
        g = LocaltimeGrower(self.d, [0] * self.d, self.mu_cdf_o,
                            self.split_cdf_o, self.split_kp_o, self.split_kf_o,
                            self.table, self.n_sets, self.r2_trunc, 0,
                            int(self.key0) ^ _CLONE_SALT, int(new_key1))
        cdef LocaltimeGrower gg = <LocaltimeGrower>g
        cdef int j
        for j in range(self.d):
            gg.spine[j] = self.spine[j]
            gg.slot[j] = self.slot[j]
        gg.e.budget = self.e.budget
        gg.trees_rem = self.trees_rem
        gg.root_done = self.root_done
        gg.spine_exited = self.spine_exited
        gg.finished = self.finished
        gg.aborted = self.aborted
        for j in range(self.n_sets):
            gg.e.counts[j] = self.e.counts[j]
        # copy the DFS stack
        while gg.e.cap < self.e.sp:
            gg.e.grow_stack()
        gg.e.sp = self.e.sp
        cdef int k
        for k in range(self.e.sp):
            for j in range(self.d):
                gg.e.spos[k, j] = self.e.spos[k, j]
            gg.e.spend[k] = self.e.spend[k]
        return g

    cdef inline bint _bump(self, int64_t* pos, int* status):
        """Charge + count; True if a target count was incremented."""
        cdef int v
        self.e.budget -= 1
        if self.e.budget < 0:
            status[0] = ST_ABORT
            return False
        status[0] = ST_OK
        v = self.e.probe_a(pos)
        if v >= 0:
            self.e.counts[v] += 1
            return True
        return False

    def grow_until(self, long long level):
        """Grow until every target count >= level (level < 0: exhaust)."""
        cdef int st = self._grow(level)
        if st == G_ABORT:
            self.aborted = True
            self.finished = True
        return st

    cdef int _grow(self, long long level):
        cdef int status, j, kp, kf
        cdef bint bumped
        cdef int64_t child[MAXD]
        cdef int64_t* parent
        cdef int64_t* stchild
        if self.finished:
            return G_DONE
        if not self.root_done:
            self.root_done = True
            for j in range(self.d):
                self.slot[j] = self.spine[j]
            bumped = self._bump(self.slot, &status)
            if status == ST_ABORT:
                return G_ABORT
            if self.e.norm2(self.slot) <= self.r2_trunc:
                self.trees_rem = self.e.draw_count(self.e.mu_cdf)
            else:
                self.trees_rem = 0
            if bumped and level >= 0 and self.min_count() >= level:
                return G_LEVEL
        while True:
            while self.e.sp > 0:
                if self.e.spend[self.e.sp - 1] == 0:
                    self.e.sp -= 1
                    continue
                self.e.spend[self.e.sp - 1] -= 1
                if self.e.sp >= self.e.cap:
                    self.e.grow_stack()
                parent = &self.e.spos[self.e.sp - 1, 0]
                stchild = &self.e.spos[self.e.sp, 0]
                self.e.step_into(parent, stchild)
                bumped = self._bump(stchild, &status)
                if status == ST_ABORT:
                    return G_ABORT
                if self.e.norm2(stchild) <= self.r2_trunc:
                    self.e.spend[self.e.sp] = <int32_t>self.e.draw_count(self.e.mu_cdf)
                    self.e.sp += 1
                if bumped and level >= 0 and self.min_count() >= level:
                    return G_LEVEL
            if self.trees_rem > 0:
                self.trees_rem -= 1
                self.e.step_into(self.slot, child)
                bumped = self._bump(child, &status)
                if status == ST_ABORT:
                    return G_ABORT
                if self.e.norm2(child) <= self.r2_trunc:
                    if self.e.sp >= self.e.cap:
                        self.e.grow_stack()
                    for j in range(self.d):
                        self.e.spos[self.e.sp, j] = child[j]
                    self.e.spend[self.e.sp] = <int32_t>self.e.draw_count(self.e.mu_cdf)
                    self.e.sp += 1
                if bumped and level >= 0 and self.min_count() >= level:
                    return G_LEVEL
                continue
            if self.spine_exited:
                self.finished = True
                return G_DONE
            self.e.step_inplace(self.spine)
            for j in range(self.d):
                self.slot[j] = self.spine[j]
            bumped = self._bump(self.slot, &status)
            if status == ST_ABORT:
                return G_ABORT
            if self.e.norm2(self.slot) <= self.r2_trunc:
                self.e.draw_split(&kp, &kf)
                self.trees_rem = kp + kf
            else:
                self.trees_rem = 0
                self.spine_exited = True
            if bumped and level >= 0 and self.min_count() >= level:
                return G_LEVEL
