# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: the death-process kernel psi and the frame simulator.

Every routine here has a line-for-line twin in ``_pykernels.py``; the two
must stay numerically interchangeable (the simulator bitwise so).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, expm1, lgamma, fabs, INFINITY
from libcpp.vector cimport vector

from .errors import QuadratureError

cnp.import_array()

# Gauss-Kronrod 7/15 nodes and weights (QUADPACK qk15).
cdef double XGK[8]
cdef double WGK[8]
cdef double WG[4]
XGK[:] = [0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
          0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
          0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
          0.207784955007898467600689403773245, 0.0]
WGK[:] = [0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
          0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
          0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
          0.204432940075298892414161999234649, 0.209482141084727828012999174891714]
WG[:] = [0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
         0.381830050505118944950369775488975, 0.417959183673469387755102040816327]

DEF MAX_INTERVALS = 4000


cdef struct IdleParams:
    int m          # queued transfers: occupied - servers
    int j
    int c
    double mu_f
    double log_rate
    double rate
    double log_norm


cdef inline double idle_integrand(double t, IdleParams* p) noexcept nogil:
    # Erlang(m+1, c*muF) density at t times Pr(j of the c-1 survivors remain
    # after the rest of the frame, 1-t).
    cdef double s = 1.0 - t
    cdef double lg
    cdef int free_ = p.c - p.j - 1
    if p.rate <= 0.0:
        return 0.0
    if t <= 0.0 and p.m > 0:
        return 0.0
    if free_ > 0 and s <= 0.0:
        return 0.0
    lg = p.log_norm - p.rate * t - s * p.j * p.mu_f
    if p.m > 0:
        lg += p.m * log(t)
    if free_ > 0:
        lg += free_ * log(-expm1(-s * p.mu_f))
    return exp(lg)


cdef void gk15(double a, double b, IdleParams* p, double* res, double* err) noexcept nogil:
    cdef double centr = 0.5 * (a + b)
    cdef double hlgth = 0.5 * (b - a)
    cdef double fc = idle_integrand(centr, p)
    cdef double resg = fc * WG[3]
    cdef double resk = fc * WGK[7]
    cdef int i
    cdef double absc, f1, f2
    for i in range(7):
        absc = hlgth * XGK[i]
        f1 = idle_integrand(centr - absc, p)
        f2 = idle_integrand(centr + absc, p)
        resk += WGK[i] * (f1 + f2)
        if i % 2 == 1:
            resg += WG[i // 2] * (f1 + f2)
    res[0] = resk * hlgth
    err[0] = fabs((resk - resg) * hlgth)


cdef int integrate_idle(IdleParams* p, double tol, double* out) noexcept nogil:
    """Global adaptive bisection on [0, 1]. Returns 0 on success."""
    cdef double lo[MAX_INTERVALS]
    cdef double hi[MAX_INTERVALS]
    cdef double val[MAX_INTERVALS]
    cdef double er[MAX_INTERVALS]
    cdef int n = 1
    cdef int i, worst
    cdef double total, total_err, mid, r1, e1, r2, e2
    gk15(0.0, 1.0, p, &val[0], &er[0])
    lo[0] = 0.0
    hi[0] = 1.0
    while True:
        total = 0.0
        total_err = 0.0
        worst = 0
        for i in range(n):
            total += val[i]
            total_err += er[i]
            if er[i] > er[worst]:
                worst = i
        if total_err <= tol:
            out[0] = total
            return 0
        if n >= MAX_INTERVALS:
            out[0] = total
            return 1
        mid = 0.5 * (lo[worst] + hi[worst])
        if mid <= lo[worst] or mid >= hi[worst]:
            out[0] = total
            return 2
        gk15(lo[worst], mid, p, &r1, &e1)
        gk15(mid, hi[worst], p, &r2, &e2)
        lo[n] = mid
        hi[n] = hi[worst]
        val[n] = r2
        er[n] = e2
        hi[worst] = mid
        val[worst] = r1
        er[worst] = e1
        n += 1


cdef inline void init_params(IdleParams* p, int occupied, int j, int c, double mu_f) noexcept nogil:
    p.m = occupied - c
    p.j = j
    p.c = c
    p.mu_f = mu_f
    p.rate = c * mu_f
    if p.rate > 0.0:
        p.log_rate = log(p.rate)
        p.log_norm = ((p.m + 1) * p.log_rate - lgamma(p.m + 1.0)
                      + lgamma(<double>c) - lgamma(j + 1.0) - lgamma(<double>(c - j)))
    else:
        p.log_rate = -INFINITY
        p.log_norm = -INFINITY


cdef inline double log_poisson(int k, double lam) noexcept nogil:
    if lam <= 0.0:
        return 0.0 if k == 0 else -INFINITY
    return k * log(lam) - lam - lgamma(k + 1.0)


cdef inline double idle_mass_bound(int m, double rate) noexcept nogil:
    # Upper bound on Pr(Poisson(rate) >= m + 1) = total case-3 mass of the row.
    cdef double lp
    if rate <= 0.0:
        return 0.0
    if m + 2.0 <= rate + 1.0:
        return 1.0
    lp = log_poisson(m + 1, rate)
    return exp(lp) * (m + 2.0) / (m + 2.0 - rate)


def psi_partial_idle(int occupied, int j, int servers, double mu_f, double tol):
    """Case-3 kernel entry for occupied >= servers > j >= 0."""
    cdef IdleParams p
    cdef double out
    cdef int status
    if not (occupied >= servers > j >= 0):
        return 0.0
    init_params(&p, occupied, j, servers, mu_f)
    status = integrate_idle(&p, tol, &out)
    if status != 0:
        raise QuadratureError(
            f"quadrature did not converge (occupied={occupied}, j={j}, servers={servers}, "
            f"mu_f={mu_f}, tol={tol})")
    return out


def psi_matrix(int servers, int q_max, double mu_f, double tol):
    """Full (q_max+1) x (q_max+1) one-frame kernel psi[occupied, j]."""
    cdef int n = q_max + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] psi = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] P = psi
    cdef int o, j, status
    cdef double stay = exp(-mu_f)
    cdef double log_stay = -mu_f
    cdef double log_go = log(-expm1(-mu_f)) if mu_f > 0.0 else -INFINITY
    cdef double rate = servers * mu_f
    cdef double lb, out
    cdef IdleParams p
    for o in range(n):
        if o <= servers:
            for j in range(o + 1):
                if mu_f <= 0.0:
                    P[o, j] = 1.0 if j == o else 0.0
                elif j == o:
                    P[o, j] = exp(o * log_stay)
                else:
                    lb = lgamma(o + 1.0) - lgamma(j + 1.0) - lgamma(o - j + 1.0)
                    P[o, j] = exp(lb + j * log_stay + (o - j) * log_go)
        else:
            for j in range(servers, o + 1):
                P[o, j] = exp(log_poisson(o - j, rate))
            if idle_mass_bound(o - servers, rate) < tol * 1e-3:
                continue
            for j in range(servers):
                init_params(&p, o, j, servers, mu_f)
                status = integrate_idle(&p, tol, &out)
                if status != 0:
                    raise QuadratureError(
                        f"quadrature did not converge (occupied={o}, j={j}, servers={servers}, "
                        f"mu_f={mu_f}, tol={tol})")
                P[o, j] = out
    return psi


# ------------------------------------------------------------------ simulator

cdef class FrameEngine:
    """Frame-driven round-robin BBU pool; state persists across ``run`` calls.

    ``servers < 0`` selects the per-frame budget sum_j min(L, l_j).
    Arrivals are supplied by the caller so both backends see identical
    random inputs.
    """
    cdef public int num_rrh, max_concurrent, servers, cap, warmup_frames
    cdef public double frame_duration
    cdef public bint record_t1, record_t2, record_t3
    # per-RRH FIFO ring buffers
    cdef double[:, ::1] q_tsr
    cdef double[:, ::1] q_t1
    cdef double[:, ::1] q_dem
    cdef long[::1] q_head
    cdef long[::1] q_size
    cdef long[::1] busy
    # server slots
    cdef int n_slots
    cdef double[::1] s_time
    cdef int[::1] s_rrh
    cdef double[::1] s_t1
    cdef double[::1] s_t2
    cdef double[::1] s_t3
    cdef char[::1] s_rec
    cdef int[::1] heap
    cdef int heap_n
    cdef int[::1] free_stack
    cdef int free_n
    cdef int cursor
    cdef long busy_total
    cdef long budget
    cdef public long long frame_index
    cdef public long long arrivals, blocked, completed, frames_observed
    cdef public double active_server_frames, offered_server_frames
    cdef public long max_rrh_busy
    cdef public long max_over_budget
    cdef vector[double] v_t1, v_t2, v_t3
    cdef vector[int] v_rrh
    cdef public object occupancy_pre, occupancy_post
    cdef long long[:, ::1] occ_pre
    cdef long long[:, ::1] occ_post

    def __init__(self, int num_rrh, int max_concurrent, double frame_duration, int servers,
                 int cap, int warmup_frames, bint record_t1=True, bint record_t2=True,
                 bint record_t3=True):
        self.num_rrh = num_rrh
        self.max_concurrent = max_concurrent
        self.frame_duration = frame_duration
        self.servers = servers
        self.cap = cap
        self.warmup_frames = warmup_frames
        self.record_t1 = record_t1
        self.record_t2 = record_t2
        self.record_t3 = record_t3
        self.q_tsr = np.zeros((num_rrh, cap), dtype=np.float64)
        self.q_t1 = np.zeros((num_rrh, cap), dtype=np.float64)
        self.q_dem = np.zeros((num_rrh, cap), dtype=np.float64)
        self.q_head = np.zeros(num_rrh, dtype=np.int_)
        self.q_size = np.zeros(num_rrh, dtype=np.int_)
        self.busy = np.zeros(num_rrh, dtype=np.int_)
        self.n_slots = num_rrh * max_concurrent
        self.s_time = np.zeros(self.n_slots, dtype=np.float64)
        self.s_rrh = np.zeros(self.n_slots, dtype=np.intc)
        self.s_t1 = np.zeros(self.n_slots, dtype=np.float64)
        self.s_t2 = np.zeros(self.n_slots, dtype=np.float64)
        self.s_t3 = np.zeros(self.n_slots, dtype=np.float64)
        self.s_rec = np.zeros(self.n_slots, dtype=np.int8)
        self.heap = np.zeros(self.n_slots, dtype=np.intc)
        self.heap_n = 0
        # free slots are taken from the end: slot 0 first
        self.free_stack = np.arange(self.n_slots - 1, -1, -1, dtype=np.intc)
        self.free_n = self.n_slots
        self.cursor = 0
        self.busy_total = 0
        self.budget = 0
        self.frame_index = 0
        self.arrivals = 0
        self.blocked = 0
        self.completed = 0
        self.frames_observed = 0
        self.active_server_frames = 0.0
        self.offered_server_frames = 0.0
        self.max_rrh_busy = 0
        self.max_over_budget = -(1 << 30)
        self.occupancy_pre = np.zeros((num_rrh, cap + 1), dtype=np.int64)
        self.occupancy_post = np.zeros((num_rrh, cap + 1), dtype=np.int64)
        self.occ_pre = self.occupancy_pre
        self.occ_post = self.occupancy_post

    # -- binary heap on (s_time, slot) --------------------------------------
    cdef inline bint _less(self, int a, int b) noexcept nogil:
        if self.s_time[a] < self.s_time[b]:
            return True
        if self.s_time[a] > self.s_time[b]:
            return False
        return a < b

    cdef void _push(self, int slot) noexcept nogil:
        cdef int i = self.heap_n
        cdef int parent
        self.heap[i] = slot
        self.heap_n += 1
        while i > 0:
            parent = (i - 1) >> 1
            if self._less(self.heap[i], self.heap[parent]):
                self.heap[i], self.heap[parent] = self.heap[parent], self.heap[i]
                i = parent
            else:
                break

    cdef int _pop(self) noexcept nogil:
        cdef int top = self.heap[0]
        cdef int i = 0
        cdef int l, r, m
        self.heap_n -= 1
        if self.heap_n > 0:
            self.heap[0] = self.heap[self.heap_n]
            while True:
                l = 2 * i + 1
                r = l + 1
                m = i
                if l < self.heap_n and self._less(self.heap[l], self.heap[m]):
                    m = l
                if r < self.heap_n and self._less(self.heap[r], self.heap[m]):
                    m = r
                if m == i:
                    break
                self.heap[i], self.heap[m] = self.heap[m], self.heap[i]
                i = m
        return top

    cdef void _assign(self, double now, double warm_t) noexcept nogil:
        cdef int s, j, slot, found
        cdef long h
        cdef double tsr
        while self.busy_total < self.budget:
            found = -1
            for s in range(self.num_rrh):
                j = (self.cursor + s) % self.num_rrh
                if self.q_size[j] > 0 and self.busy[j] < self.max_concurrent:
                    found = j
                    break
            if found < 0:
                return
            j = found
            h = self.q_head[j]
            tsr = self.q_tsr[j, h]
            self.free_n -= 1
            slot = self.free_stack[self.free_n]
            self.s_time[slot] = now + self.q_dem[j, h]
            self.s_rrh[slot] = j
            self.s_t1[slot] = self.q_t1[j, h]
            self.s_t2[slot] = now - tsr
            self.s_t3[slot] = self.q_dem[j, h]
            self.s_rec[slot] = tsr >= warm_t
            self.q_head[j] = (h + 1) % self.cap
            self.q_size[j] -= 1
            self.busy[j] += 1
            self.busy_total += 1
            if self.busy[j] > self.max_rrh_busy:
                self.max_rrh_busy = self.busy[j]
            if self.busy_total - self.budget > self.max_over_budget:
                self.max_over_budget = self.busy_total - self.budget
            self._push(slot)
            self.cursor = (j + 1) % self.num_rrh

    def run(self, long long[:, ::1] counts, double[::1] t1_all, double[::1] dem_all,
            long long[::1] offsets):
        """Advance ``counts.shape[1]`` frames.

        ``counts[j, k]`` arrivals hit RRH j in the k-th frame of this call;
        their t1 and demand values are read consecutively from
        ``t1_all``/``dem_all`` starting at ``offsets[j]``.
        """
        cdef int n_frames = counts.shape[1]
        cdef int N = self.num_rrh
        cdef int k, j, slot
        cdef long long a, i
        cdef long long[::1] pos = np.array(offsets, dtype=np.int64)
        cdef double F = self.frame_duration
        cdef double warm_t = self.warmup_frames * F
        cdef double t0, frame_end, tt
        cdef long tail, in_sys, b
        cdef bint observe
        with nogil:
            for k in range(n_frames):
                t0 = self.frame_index * F
                frame_end = t0 + F
                observe = self.frame_index >= self.warmup_frames
                if observe:
                    for j in range(N):
                        self.occ_pre[j, self.q_size[j] + self.busy[j]] += 1
                for j in range(N):
                    a = counts[j, k]
                    self.arrivals += a
                    for i in range(a):
                        if self.q_size[j] + self.busy[j] < self.cap:
                            tail = (self.q_head[j] + self.q_size[j]) % self.cap
                            self.q_tsr[j, tail] = t0
                            self.q_t1[j, tail] = t1_all[pos[j]]
                            self.q_dem[j, tail] = dem_all[pos[j]]
                            self.q_size[j] += 1
                        else:
                            self.blocked += 1
                        pos[j] += 1
                if self.servers < 0:
                    b = 0
                    for j in range(N):
                        in_sys = self.q_size[j] + self.busy[j]
                        b += in_sys if in_sys < self.max_concurrent else self.max_concurrent
                    self.budget = b
                else:
                    self.budget = self.servers
                if observe:
                    for j in range(N):
                        self.occ_post[j, self.q_size[j] + self.busy[j]] += 1
                    self.frames_observed += 1
                    self.active_server_frames += self.budget
                    self.offered_server_frames += self.n_slots
                self._assign(t0, warm_t)
                while self.heap_n > 0 and self.s_time[self.heap[0]] < frame_end:
                    slot = self._pop()
                    tt = self.s_time[slot]
                    j = self.s_rrh[slot]
                    self.busy[j] -= 1
                    self.busy_total -= 1
                    self.completed += 1
                    if self.s_rec[slot]:
                        if self.record_t1 or self.record_t2 or self.record_t3:
                            self.v_rrh.push_back(j)
                        if self.record_t1:
                            self.v_t1.push_back(self.s_t1[slot])
                        if self.record_t2:
                            self.v_t2.push_back(self.s_t2[slot])
                        if self.record_t3:
                            self.v_t3.push_back(self.s_t3[slot])
                    self.free_stack[self.free_n] = slot
                    self.free_n += 1
                    self._assign(tt, warm_t)
                self.frame_index += 1

    def in_system(self):
        return int(np.asarray(self.q_size).sum() + np.asarray(self.busy).sum())

    def samples(self):
        cdef Py_ssize_t n1 = self.v_t1.size(), n2 = self.v_t2.size(), n3 = self.v_t3.size()
        cdef Py_ssize_t nr = self.v_rrh.size()
        rrh = np.empty(nr, dtype=np.int32)
        cdef int[::1] ar = rrh
        t1 = np.empty(n1, dtype=np.float64)
        t2 = np.empty(n2, dtype=np.float64)
        t3 = np.empty(n3, dtype=np.float64)
        cdef double[::1] a1 = t1, a2 = t2, a3 = t3
        cdef Py_ssize_t i
        for i in range(n1):
            a1[i] = self.v_t1[i]
        for i in range(n2):
            a2[i] = self.v_t2[i]
        for i in range(n3):
            a3[i] = self.v_t3[i]
        for i in range(nr):
            ar[i] = self.v_rrh[i]
        return t1, t2, t3, rrh
