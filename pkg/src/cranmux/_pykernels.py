"""Pure-Python twins of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is not built or ``CRANMUX_BACKEND=python``.
The simulator engine performs the same floating-point operations in the
same order as the compiled one, so both produce identical samples.
"""
import heapq
import math

import numpy as np
from scipy.integrate import quad, quad_vec

from .errors import QuadratureError


def _log_poisson(k, lam):
    if lam <= 0.0:
        return 0.0 if k == 0 else -math.inf
    return k * math.log(lam) - lam - math.lgamma(k + 1.0)


def _idle_mass_bound(m, rate):
    # upper bound on Pr(Poisson(rate) >= m + 1)
    if rate <= 0.0:
        return 0.0
    if m + 2.0 <= rate + 1.0:
        return 1.0
    return math.exp(_log_poisson(m + 1, rate)) * (m + 2.0) / (m + 2.0 - rate)


def _idle_integrand_vec(occupied, servers, mu_f):
    """Integrand over t for all j in 0..servers-1 at once."""
    m = occupied - servers
    rate = servers * mu_f
    j = np.arange(servers, dtype=np.float64)
    free = servers - j - 1
    log_norm = ((m + 1) * math.log(rate) - math.lgamma(m + 1.0) + math.lgamma(servers)
                - np.array([math.lgamma(x + 1.0) for x in j])
                - np.array([math.lgamma(servers - x) for x in j]))

    def f(t):
        s = 1.0 - t
        if m > 0 and t <= 0.0:
            return np.zeros(servers)
        lg = log_norm - rate * t - s * j * mu_f
        if m > 0:
            lg = lg + m * math.log(t)
        if s <= 0.0:
            out = np.where(free > 0, 0.0, np.exp(lg))
            return out
        lg = lg + free * math.log(-math.expm1(-s * mu_f))
        return np.exp(lg)

    return f


def psi_partial_idle(occupied, j, servers, mu_f, tol):
    """Case-3 kernel entry for occupied >= servers > j >= 0."""
    if not (occupied >= servers > j >= 0):
        return 0.0
    if servers * mu_f <= 0.0:
        return 0.0
    f = _idle_integrand_vec(occupied, servers, mu_f)
    val, err = quad(lambda t: f(t)[j], 0.0, 1.0, epsabs=tol, epsrel=0.0, limit=2000)
    if not err <= tol:
        raise QuadratureError(
            f"quadrature did not converge (occupied={occupied}, j={j}, servers={servers}, "
            f"mu_f={mu_f}, tol={tol})")
    return float(val)


def psi_matrix(servers, q_max, mu_f, tol):
    """Full (q_max+1) x (q_max+1) one-frame kernel psi[occupied, j]."""
    n = q_max + 1
    psi = np.zeros((n, n))
    log_stay = -mu_f
    log_go = math.log(-math.expm1(-mu_f)) if mu_f > 0.0 else -math.inf
    rate = servers * mu_f
    for o in range(n):
        if o <= servers:
            for j in range(o + 1):
                if mu_f <= 0.0:
                    psi[o, j] = 1.0 if j == o else 0.0
                elif j == o:
                    psi[o, j] = math.exp(o * log_stay)
                else:
                    lb = math.lgamma(o + 1.0) - math.lgamma(j + 1.0) - math.lgamma(o - j + 1.0)
                    psi[o, j] = math.exp(lb + j * log_stay + (o - j) * log_go)
        else:
            for j in range(servers, o + 1):
                psi[o, j] = math.exp(_log_poisson(o - j, rate))
            if _idle_mass_bound(o - servers, rate) < tol * 1e-3:
                continue
            f = _idle_integrand_vec(o, servers, mu_f)
            val, err = quad_vec(f, 0.0, 1.0, epsabs=tol, epsrel=0.0, norm="max", limit=2000)
            if not err <= tol:
                raise QuadratureError(
                    f"quadrature did not converge (occupied={o}, servers={servers}, "
                    f"mu_f={mu_f}, tol={tol})")
            psi[o, :servers] = val
    return psi


class FrameEngine:
    """Frame-driven round-robin BBU pool; state persists across ``run`` calls.

    ``servers < 0`` selects the per-frame budget sum_j min(L, l_j).
    """

    def __init__(self, num_rrh, max_concurrent, frame_duration, servers, cap,
                 warmup_frames, record_t1=True, record_t2=True, record_t3=True):
        self.num_rrh = num_rrh
        self.max_concurrent = max_concurrent
        self.frame_duration = float(frame_duration)
        self.servers = servers
        self.cap = cap
        self.warmup_frames = warmup_frames
        self.record_t1 = record_t1
        self.record_t2 = record_t2
        self.record_t3 = record_t3
        # queue entries: (frame start, t1, demand)
        self.queues = [[] for _ in range(num_rrh)]
        self.q_head = [0] * num_rrh
        self.busy = [0] * num_rrh
        self.n_slots = num_rrh * max_concurrent
        self.slots = [None] * self.n_slots
        self.heap = []
        self.free_stack = list(range(self.n_slots - 1, -1, -1))
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
        self._t1, self._t2, self._t3, self._rrh = [], [], [], []

    def _qsize(self, j):
        return len(self.queues[j]) - self.q_head[j]

    def _assign(self, now, warm_t):
        N = self.num_rrh
        while self.busy_total < self.budget:
            found = -1
            for s in range(N):
                j = (self.cursor + s) % N
                if self._qsize(j) > 0 and self.busy[j] < self.max_concurrent:
                    found = j
                    break
            if found < 0:
                return
            j = found
            q = self.queues[j]
            tsr, t1, dem = q[self.q_head[j]]
            self.q_head[j] += 1
            if self.q_head[j] > 4096 and self.q_head[j] * 2 > len(q):
                del q[:self.q_head[j]]
                self.q_head[j] = 0
            slot = self.free_stack.pop()
            done = now + dem
            self.slots[slot] = (j, t1, now - tsr, dem, tsr >= warm_t)
            self.busy[j] += 1
            self.busy_total += 1
            if self.busy[j] > self.max_rrh_busy:
                self.max_rrh_busy = self.busy[j]
            if self.busy_total - self.budget > self.max_over_budget:
                self.max_over_budget = self.busy_total - self.budget
            heapq.heappush(self.heap, (done, slot))
            self.cursor = (j + 1) % N

    def run(self, counts, t1_all, dem_all, offsets):
        counts = np.asarray(counts)
        t1_all = np.asarray(t1_all, dtype=np.float64).tolist()
        dem_all = np.asarray(dem_all, dtype=np.float64).tolist()
        pos = [int(x) for x in offsets]
        N = self.num_rrh
        F = self.frame_duration
        warm_t = self.warmup_frames * F
        L = self.max_concurrent
        cnt = counts.tolist()
        for k in range(counts.shape[1]):
            t0 = self.frame_index * F
            frame_end = t0 + F
            observe = self.frame_index >= self.warmup_frames
            if observe:
                for j in range(N):
                    self.occupancy_pre[j, self._qsize(j) + self.busy[j]] += 1
            for j in range(N):
                a = cnt[j][k]
                self.arrivals += a
                q = self.queues[j]
                for _ in range(a):
                    if self._qsize(j) + self.busy[j] < self.cap:
                        q.append((t0, t1_all[pos[j]], dem_all[pos[j]]))
                    else:
                        self.blocked += 1
                    pos[j] += 1
            if self.servers < 0:
                self.budget = sum(min(self._qsize(j) + self.busy[j], L) for j in range(N))
            else:
                self.budget = self.servers
            if observe:
                for j in range(N):
                    self.occupancy_post[j, self._qsize(j) + self.busy[j]] += 1
                self.frames_observed += 1
                self.active_server_frames += self.budget
                self.offered_server_frames += self.n_slots
            self._assign(t0, warm_t)
            heap = self.heap
            while heap and heap[0][0] < frame_end:
                tt, slot = heapq.heappop(heap)
                j, t1, t2, t3, rec = self.slots[slot]
                self.busy[j] -= 1
                self.busy_total -= 1
                self.completed += 1
                if rec:
                    if self.record_t1 or self.record_t2 or self.record_t3:
                        self._rrh.append(j)
                    if self.record_t1:
                        self._t1.append(t1)
                    if self.record_t2:
                        self._t2.append(t2)
                    if self.record_t3:
                        self._t3.append(t3)
                self.free_stack.append(slot)
                self._assign(tt, warm_t)
            self.frame_index += 1

    def in_system(self):
        return sum(self._qsize(j) + self.busy[j] for j in range(self.num_rrh))

    def samples(self):
        return (np.array(self._t1, dtype=np.float64), np.array(self._t2, dtype=np.float64),
                np.array(self._t3, dtype=np.float64), np.array(self._rrh, dtype=np.int32))
