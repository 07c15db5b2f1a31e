"""Frame-based simulation of N RRH queues sharing one BBU pool.

SRs join their RRH's FIFO only at frame starts. Servers are handed out
round-robin over RRHs (a persistent cursor moving one RRH per grant),
never more than L at one RRH nor more than the pool budget in total.
Service is exponential and continuous in time; a server freed mid-frame is
handed on at once.

Random inputs come from one PCG64 stream per RRH spawned from the seed
and are drawn in chunks before any scheduling, so the compiled and the
pure-Python engines consume identical numbers.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .config import SystemConfig, dump_config, stability_check
from .errors import ConfigError, CranmuxError, InfeasibleError

__all__ = [
    "SimulationConfig",
    "SimulationResult",
    "simulate",
    "empirical_percentile",
    "required_servers_by_simulation",
    "write_samples_csv",
]

LONG_TERM = "long_term"
SHORT_TERM = "short_term"
DEFAULT_QUEUE_CAP = 10_000
CHUNK_FRAMES = 1 << 15


@dataclass(frozen=True)
class SimulationConfig:
    system: SystemConfig
    policy: str = LONG_TERM
    servers: int | None = None
    num_frames: int = 100_000
    warmup_frames: int = 1_000
    seed: int = 0
    queue_cap: int = DEFAULT_QUEUE_CAP
    record: tuple[str, ...] = ("t1", "t2", "t3")
    backend: str | None = None

    def __post_init__(self):
        if self.policy not in (LONG_TERM, SHORT_TERM):
            raise ConfigError(f"policy must be {LONG_TERM!r} or {SHORT_TERM!r}")
        if self.num_frames < 1 or not 0 <= self.warmup_frames < self.num_frames:
            raise ConfigError("need num_frames >= 1 and 0 <= warmup_frames < num_frames")
        if self.policy == LONG_TERM:
            if self.servers is None or not 1 <= self.servers <= self.system.max_servers:
                raise ConfigError(
                    f"long-term policy needs 1 <= servers <= {self.system.max_servers}")
        if self.queue_cap < 1:
            raise ConfigError("queue_cap must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        bad = set(self.record) - {"t1", "t2", "t3"}
        if bad:
            raise ConfigError(f"unknown sample kinds {sorted(bad)}")


@dataclass(eq=False)
class SimulationResult:
    t1_samples: np.ndarray
    t2_samples: np.ndarray
    t3_samples: np.ndarray
    sample_rrh: np.ndarray
    active_server_frames: float
    offered_server_frames: float
    frames_observed: int
    transfers_completed: int
    transfers_blocked: int
    transfers_arrived: int = 0
    in_system: int = 0
    max_rrh_busy: int = 0
    max_over_budget: int = 0
    occupancy_pre: np.ndarray = field(default=None, repr=False)
    occupancy_post: np.ndarray = field(default=None, repr=False)
    backend: str = ""

    @property
    def empirical_savings(self) -> float:
        if self.offered_server_frames == 0:
            return 1.0
        return 1.0 - self.active_server_frames / self.offered_server_frames

    def occupancy_distribution(self, rrh_index: int = 0, post_arrival: bool = False) -> np.ndarray:
        h = (self.occupancy_post if post_arrival else self.occupancy_pre)[rrh_index]
        return h / max(h.sum(), 1)

    def summary(self, zetas=(0.99, 0.999)) -> dict:
        out = {
            "frames_observed": self.frames_observed,
            "transfers_arrived": self.transfers_arrived,
            "transfers_completed": self.transfers_completed,
            "transfers_blocked": self.transfers_blocked,
            "in_system": self.in_system,
            "active_server_frames": self.active_server_frames,
            "offered_server_frames": self.offered_server_frames,
            "empirical_savings": self.empirical_savings,
            "max_rrh_busy": self.max_rrh_busy,
            "max_over_budget": self.max_over_budget,
        }
        for name, s in (("t1", self.t1_samples), ("t2", self.t2_samples), ("t3", self.t3_samples)):
            out[f"mean_{name}"] = float(s.mean()) if len(s) else None
            for z in zetas:
                out[f"{_zeta_label(z)}_{name}"] = empirical_percentile(s, z) if len(s) else None
        return out


def _zeta_label(zeta: float) -> str:
    return "p" + f"{zeta * 100:.10g}".replace(".", "_")


def simulate(config: SimulationConfig) -> SimulationResult:
    sysc = config.system
    if config.policy == LONG_TERM and not stability_check(sysc, config.servers).stable:
        warnings.warn("simulating an unstable operating point; expect blocked transfers",
                      RuntimeWarning, stacklevel=2)
    kernels = _backend.get(config.backend)
    servers = config.servers if config.policy == LONG_TERM else -1
    engine = kernels.FrameEngine(
        sysc.num_rrh, sysc.max_concurrent, sysc.frame_duration, servers, config.queue_cap,
        config.warmup_frames, "t1" in config.record, "t2" in config.record,
        "t3" in config.record)
    children = np.random.SeedSequence(config.seed).spawn(sysc.num_rrh)
    gens = [np.random.Generator(np.random.PCG64(s)) for s in children]
    F = sysc.frame_duration
    mean_demand = 1.0 / sysc.service_rate
    done = 0
    while done < config.num_frames:
        n = min(CHUNK_FRAMES, config.num_frames - done)
        counts = np.empty((sysc.num_rrh, n), dtype=np.int64)
        t1_parts, dem_parts = [], []
        for j, (g, lam) in enumerate(zip(gens, sysc.arrival_rates)):
            counts[j] = g.poisson(lam, n)
            total = int(counts[j].sum())
            t1_parts.append(F * g.random(total))
            dem_parts.append(g.exponential(mean_demand, total))
        sizes = np.array([len(p) for p in t1_parts], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
        engine.run(counts, np.concatenate(t1_parts), np.concatenate(dem_parts), offsets)
        done += n
        in_sys = engine.in_system()
        if engine.arrivals != engine.completed + in_sys + engine.blocked:
            raise CranmuxError("transfer conservation violated")
    t1, t2, t3, rrh = engine.samples()
    return SimulationResult(
        t1_samples=t1, t2_samples=t2, t3_samples=t3, sample_rrh=rrh,
        active_server_frames=float(engine.active_server_frames),
        offered_server_frames=float(engine.offered_server_frames),
        frames_observed=int(engine.frames_observed),
        transfers_completed=int(engine.completed),
        transfers_blocked=int(engine.blocked),
        transfers_arrived=int(engine.arrivals),
        in_system=int(engine.in_system()),
        max_rrh_busy=int(engine.max_rrh_busy),
        max_over_budget=int(engine.max_over_budget),
        occupancy_pre=np.asarray(engine.occupancy_pre).copy(),
        occupancy_post=np.asarray(engine.occupancy_post).copy(),
        backend=kernels.__name__.rsplit(".", 1)[-1],
    )


def empirical_percentile(samples, zeta: float) -> float:
    """Nearest-rank percentile: the ceil(zeta * n)-th smallest sample."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ConfigError("empirical_percentile of an empty sample")
    if not 0.0 < zeta < 1.0:
        raise ConfigError("zeta must lie in (0, 1)")
    n = s.size
    # round first so that e.g. 0.99 * 100 is rank 99, not 100
    rank = max(1, math.ceil(round(zeta * n, 9)))
    return float(np.partition(s, rank - 1)[rank - 1])


def required_servers_by_simulation(config: SystemConfig, tau: float, zeta: float,
                                   frames: int = 1_000_000, seed: int = 0,
                                   warmup_frames: int | None = None,
                                   start: int | None = None, backend: str | None = None) -> int:
    """Smallest pool whose simulated zeta-percentile of t2 is below ``tau``.

    Pool sizes are tried upward from the smallest stable one with common
    random numbers (same seed for each size).
    """
    from .savings import stable_min_servers

    if warmup_frames is None:
        warmup_frames = min(1_000, frames // 10)
    c0 = stable_min_servers(config) if start is None else start
    best = math.inf
    for c in range(c0, config.max_servers + 1):
        res = simulate(SimulationConfig(config, LONG_TERM, c, frames, warmup_frames, seed,
                                        record=("t2",), backend=backend))
        if res.t2_samples.size == 0:
            return c
        p = empirical_percentile(res.t2_samples, zeta)
        best = min(best, p)
        if p < tau:
            return c
    raise InfeasibleError(f"simulated p{zeta * 100:g}(t2) stays >= {tau:g} up to "
                          f"{config.max_servers} servers (best {best:.6g})", best=best)


def result_json(config: SimulationConfig, result: SimulationResult, zetas=(0.99, 0.999)) -> str:
    params = {
        "policy": config.policy,
        "servers": config.servers,
        "num_frames": config.num_frames,
        "warmup_frames": config.warmup_frames,
        "seed": config.seed,
        "queue_cap": config.queue_cap,
        "system": dump_config(config.system),
    }
    return json.dumps({"config": params, "result": result.summary(zetas)}, indent=2,
                      sort_keys=True)


def write_samples_csv(result: SimulationResult, path) -> None:
    """Raw per-transfer samples in completion order; unrecorded kinds are left blank."""
    n = len(result.sample_rrh)

    def col(a, i):
        return repr(float(a[i])) if i < len(a) else ""

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["transfer_id", "rrh", "t1", "t2", "t3"])
        for i in range(n):
            w.writerow([i, int(result.sample_rrh[i]), col(result.t1_samples, i), col(result.t2_samples, i),
                        col(result.t3_samples, i)])
