"""Per-RRH frame-boundary occupancy chain.

State q is the number of transfers of one RRH in the system (queued or in
service) at the start of a frame, before that frame's arrivals. The RRH is
given a fixed share of ``servers`` pool servers and the state space is
capped at ``q_max = servers + M``.

One frame of departures is described by psi[o, j]: the probability that of
``o`` transfers present after arrivals, ``j`` are left at the next frame
boundary. Servers work in parallel on the head-of-line transfers with
exponential service, so this is a pure-death process with rate
min(n, c) * mu * F per frame.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from .config import SystemConfig, per_rrh_servers
from .errors import ConfigError, ConvergenceError, UnstableError

__all__ = [
    "MAX_STATES",
    "TransitionMatrix",
    "OccupancyDistribution",
    "RrhChain",
    "poisson_pmf",
    "psi_all_served",
    "psi_all_busy",
    "psi_partial_idle",
    "psi_matrix",
    "arrival_matrix",
    "build_transition_matrix",
    "stationary_distribution",
    "post_arrival_distribution",
    "solve_rrh",
    "write_matrix_csv",
    "write_distribution_csv",
]

MAX_STATES = 4001
POWER_ITER_CAP = 1_000_000
STATIONARY = "stationary_pre_arrival"
POST_ARRIVAL = "post_arrival"


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    servers: int
    q_max: int
    rows: np.ndarray


@dataclass(frozen=True, eq=False)
class OccupancyDistribution:
    probs: np.ndarray
    kind: str

    @property
    def q_max(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def tail_mass(self, level: int) -> float:
        """Pr(q >= level)."""
        return float(self.probs[level:].sum()) if level <= self.q_max else 0.0


# ------------------------------------------------------------------- kernels

def poisson_pmf(k: int, lam: float) -> float:
    if k < 0 or lam < 0:
        raise ConfigError("poisson_pmf needs k >= 0 and lambda >= 0")
    if lam == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1.0))


def _poisson_pmf_vec(n: int, lam: float) -> np.ndarray:
    """pmf at 0..n-1."""
    k = np.arange(n, dtype=np.float64)
    if lam == 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    from scipy.special import gammaln

    return np.exp(k * math.log(lam) - lam - gammaln(k + 1.0))


def psi_all_served(occupied: int, j: int, servers: int, mu_f: float) -> float:
    """Every transfer has a server: each survives the frame w.p. exp(-mu_f)."""
    if j < 0 or j > occupied:
        return 0.0
    if occupied > servers:
        raise ConfigError("psi_all_served needs occupied <= servers")
    if mu_f == 0.0:
        return 1.0 if j == occupied else 0.0
    log_binom = math.lgamma(occupied + 1.0) - math.lgamma(j + 1.0) - math.lgamma(occupied - j + 1.0)
    return math.exp(log_binom - mu_f * j + (occupied - j) * math.log(-math.expm1(-mu_f)))


def psi_all_busy(occupied: int, j: int, servers: int, mu_f: float) -> float:
    """All servers stay busy all frame: departures are Poisson(servers * mu_f)."""
    if occupied <= servers or j < servers or j > occupied:
        return 0.0
    return poisson_pmf(occupied - j, servers * mu_f)


def psi_partial_idle(occupied: int, j: int, servers: int, mu_f: float,
                     quad_tol: float = 1e-10) -> float:
    """Queue drains mid-frame and ``j < servers`` transfers are left.

    Integrates over the instant the queue empties, which is
    Erlang(occupied - servers + 1, servers * mu_f) in frame units.
    """
    if not (occupied > servers > j >= 0):
        return 0.0
    return float(_backend.kernels.psi_partial_idle(occupied, j, servers, float(mu_f), quad_tol))


def psi_matrix(servers: int, q_max: int, mu_f: float, quad_tol: float = 1e-10,
               backend: str | None = None) -> np.ndarray:
    return _backend.get(backend).psi_matrix(int(servers), int(q_max), float(mu_f), float(quad_tol))


def arrival_matrix(lam: float, q_max: int, tail_mass: float = 0.0) -> np.ndarray:
    """W[i, o] = Pr(occupancy o after arrivals | i before), clipped at q_max.

    Poisson terms beyond cumulative mass 1 - tail_mass are dropped and all
    residual mass goes to the saturated state q_max.
    """
    n = q_max + 1
    pmf = _poisson_pmf_vec(n, lam)
    if tail_mass > 0.0:
        cut = np.searchsorted(np.cumsum(pmf), 1.0 - tail_mass)
        pmf[cut + 1:] = 0.0
    W = np.zeros((n, n))
    for i in range(n):
        span = q_max - i
        W[i, i:q_max] = pmf[:span]
        W[i, q_max] = max(0.0, 1.0 - W[i, i:q_max].sum())
    return W


# --------------------------------------------------------------------- chain

def build_transition_matrix(config: SystemConfig, rrh_index: int, servers: int,
                            backend: str | None = None) -> TransitionMatrix:
    if servers < 1:
        raise ConfigError("servers must be >= 1")
    if not 0 <= rrh_index < config.num_rrh:
        raise ConfigError(f"rrh_index {rrh_index} out of range")
    q_max = servers + config.queue_truncation
    if q_max + 1 > MAX_STATES:
        raise ConfigError(f"state space {q_max + 1} exceeds the limit of {MAX_STATES} states")
    lam = config.arrival_rates[rrh_index]
    tol = config.tolerances
    rows = _transition_rows(lam, servers, q_max, config.mu_f, tol.quadrature_abs_tol,
                            tol.poisson_tail_mass, backend)
    return TransitionMatrix(servers=servers, q_max=q_max, rows=rows)


def _transition_rows(lam, servers, q_max, mu_f, quad_tol, tail_mass, backend=None):
    psi = psi_matrix(servers, q_max, mu_f, quad_tol, backend)
    P = arrival_matrix(lam, q_max, tail_mass) @ psi
    defect = np.abs(P.sum(axis=1) - 1.0)
    if defect.max() > 1e-12:
        P = P / P.sum(axis=1, keepdims=True)
    np.clip(P, 0.0, 1.0, out=P)
    return P


def stationary_distribution(P: TransitionMatrix | np.ndarray, tol: float = 1e-12,
                            max_iter: int = POWER_ITER_CAP) -> OccupancyDistribution:
    """Power iteration from the empty state until the L1 step is below ``tol``."""
    M = P.rows if isinstance(P, TransitionMatrix) else np.asarray(P, dtype=np.float64)
    # right-multiplication pi <- pi P, done as P^T pi on a contiguous copy
    MT = np.ascontiguousarray(M.T)
    pi = np.zeros(M.shape[0])
    pi[0] = 1.0
    for _ in range(max_iter):
        nxt = MT @ pi
        if np.abs(nxt - pi).sum() < tol:
            nxt /= nxt.sum()
            return OccupancyDistribution(probs=nxt, kind=STATIONARY)
        pi = nxt
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def post_arrival_distribution(pi: OccupancyDistribution, lam: float,
                              q_max: int | None = None) -> OccupancyDistribution:
    """Occupancy right after a frame's arrivals, overflow lumped at q_max."""
    if pi.kind != STATIONARY:
        raise ConfigError("post_arrival_distribution expects a pre-arrival distribution")
    q_max = pi.q_max if q_max is None else q_max
    probs = np.zeros(q_max + 1)
    m = min(q_max, pi.q_max) + 1
    probs[:m] = pi.probs[:m]
    out = probs @ arrival_matrix(lam, q_max)
    return OccupancyDistribution(probs=out, kind=POST_ARRIVAL)


# --------------------------------------------------------------- convenience

@dataclass(frozen=True, eq=False)
class RrhChain:
    """Solved chain for one RRH: its rate, servers, P, pi and Pr(q')."""

    lam: float
    servers: int
    mu_f: float
    matrix: TransitionMatrix
    stationary: OccupancyDistribution
    post_arrival: OccupancyDistribution


@lru_cache(maxsize=256)
def _solve_cached(lam, servers, mu_f, truncation, quad_tol, tail_mass, power_tol, backend):
    q_max = servers + truncation
    if q_max + 1 > MAX_STATES:
        raise ConfigError(f"state space {q_max + 1} exceeds the limit of {MAX_STATES} states")
    rows = _transition_rows(lam, servers, q_max, mu_f, quad_tol, tail_mass, backend)
    tm = TransitionMatrix(servers=servers, q_max=q_max, rows=rows)
    pi = stationary_distribution(tm, power_tol)
    return RrhChain(lam=lam, servers=servers, mu_f=mu_f, matrix=tm, stationary=pi,
                    post_arrival=post_arrival_distribution(pi, lam, q_max))


def solve_rrh(config: SystemConfig, rrh_index: int, total_servers: int | None = None,
              servers: int | None = None, backend: str | None = None) -> RrhChain:
    """Build and solve the chain of one RRH.

    Give either the pool size ``total_servers`` (split by arrival share) or
    the RRH's own ``servers`` directly. Raises UnstableError when the RRH
    cannot keep up (lambda >= servers * mu * F) or gets no server at all.
    """
    if servers is None:
        if total_servers is None:
            raise ConfigError("give total_servers or servers")
        servers = per_rrh_servers(config, total_servers, rrh_index)
    lam = config.arrival_rates[rrh_index]
    if servers < 1:
        raise UnstableError(f"RRH {rrh_index} is allocated no servers")
    if lam > 0 and lam >= servers * config.mu_f:
        raise UnstableError(
            f"RRH {rrh_index}: arrival rate {lam:g} per frame >= capacity "
            f"{servers * config.mu_f:g} of {servers} servers")
    tol = config.tolerances
    return _solve_cached(float(lam), int(servers), float(config.mu_f), int(config.queue_truncation),
                         tol.quadrature_abs_tol, tol.poisson_tail_mass, tol.power_iter_tol,
                         backend or _backend.NAME)


def write_matrix_csv(P: TransitionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + [f"p{j}" for j in range(P.q_max + 1)])
        for i, row in enumerate(P.rows):
            w.writerow([i] + [repr(float(x)) for x in row])


def write_distribution_csv(dist: OccupancyDistribution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "probability"])
        for i, p in enumerate(dist.probs):
            w.writerow([i, repr(float(p))])
