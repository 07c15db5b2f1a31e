"""System parameters, stability predicates and the flat config-file format.

Units: ``frame_duration`` and every latency are in resource-time units,
``service_rate`` is per resource-time unit and ``arrival_rates`` are mean
scheduling requests *per frame* at each RRH.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

from .errors import ConfigError

__all__ = [
    "Tolerances",
    "SystemConfig",
    "StabilityReport",
    "stability_check",
    "per_rrh_servers",
    "per_rrh_allocation",
    "table_one",
    "parse_config",
    "load_config",
    "dump_config",
]


@dataclass(frozen=True)
class Tolerances:
    quadrature_abs_tol: float = 1e-10
    poisson_tail_mass: float = 1e-12
    power_iter_tol: float = 1e-12
    percentile_tol: float = 1e-9

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{f.name} must lie in (0, 1), got {v!r}")


@dataclass(frozen=True)
class SystemConfig:
    """All model parameters for one BBU pool.

    Instances are immutable and hashable, so they can be shared between
    worker processes and used as cache keys.
    """

    num_rrh: int
    max_concurrent: int
    frame_duration: float
    service_rate: float
    arrival_rates: tuple[float, ...]
    queue_truncation: int = 200
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        object.__setattr__(self, "arrival_rates", tuple(float(x) for x in self.arrival_rates))
        if int(self.num_rrh) != self.num_rrh or self.num_rrh < 1:
            raise ConfigError(f"num_rrh must be a positive integer, got {self.num_rrh!r}")
        if int(self.max_concurrent) != self.max_concurrent or self.max_concurrent < 1:
            raise ConfigError(f"max_concurrent must be >= 1, got {self.max_concurrent!r}")
        if int(self.queue_truncation) != self.queue_truncation or self.queue_truncation < 1:
            raise ConfigError(f"queue_truncation must be >= 1, got {self.queue_truncation!r}")
        if not (self.frame_duration > 0 and math.isfinite(self.frame_duration)):
            raise ConfigError(f"frame_duration must be > 0, got {self.frame_duration!r}")
        if not (self.service_rate > 0 and math.isfinite(self.service_rate)):
            raise ConfigError(f"service_rate must be > 0, got {self.service_rate!r}")
        if len(self.arrival_rates) != self.num_rrh:
            raise ConfigError(
                f"arrival_rates has {len(self.arrival_rates)} entries, expected num_rrh={self.num_rrh}"
            )
        for lam in self.arrival_rates:
            if not (lam >= 0 and math.isfinite(lam)):
                raise ConfigError(f"arrival rates must be finite and >= 0, got {lam!r}")

    @property
    def mu_f(self) -> float:
        """Expected completions per busy server per frame."""
        return self.service_rate * self.frame_duration

    @property
    def max_servers(self) -> int:
        """Air-interface limit L*N on useful pool size."""
        return self.max_concurrent * self.num_rrh

    @property
    def total_arrival_rate(self) -> float:
        return float(sum(self.arrival_rates))

    def with_frame(self, frame_duration: float) -> "SystemConfig":
        """Same physical load at a different frame length.

        The per-unit-time intensity lambda_j / F is held fixed, so the
        per-frame rates are rescaled by ``frame_duration / F``.
        """
        scale = frame_duration / self.frame_duration
        return replace(
            self,
            frame_duration=float(frame_duration),
            arrival_rates=tuple(lam * scale for lam in self.arrival_rates),
        )

    def with_rates(self, arrival_rates: Sequence[float]) -> "SystemConfig":
        return replace(self, arrival_rates=tuple(arrival_rates))

    def with_pool_load(self, rho_bbu: float) -> "SystemConfig":
        """Equal per-RRH rates giving pool utilization ``rho_bbu`` at c = L*N."""
        lam_total = rho_bbu * self.max_servers * self.mu_f
        return self.with_rates([lam_total / self.num_rrh] * self.num_rrh)


@dataclass(frozen=True)
class StabilityReport:
    rho_bbu: float
    rho_rrh: tuple[float, ...]
    stable: bool


def stability_check(config: SystemConfig, servers: int) -> StabilityReport:
    """Pool and air-interface utilizations for a pool of ``servers`` servers."""
    if servers < 1:
        raise ConfigError("servers must be >= 1")
    if servers > config.max_servers:
        raise ConfigError(
            f"servers={servers} exceeds the air-interface limit L*N={config.max_servers}"
        )
    rho_bbu = config.total_arrival_rate / (servers * config.mu_f)
    rho_rrh = tuple(lam / (config.max_concurrent * config.mu_f) for lam in config.arrival_rates)
    stable = rho_bbu < 1.0 and all(r < 1.0 for r in rho_rrh)
    return StabilityReport(rho_bbu=rho_bbu, rho_rrh=rho_rrh, stable=stable)


def per_rrh_servers(config: SystemConfig, total_servers: int, rrh_index: int) -> int:
    """Servers used when analysing RRH ``rrh_index`` on its own.

    Proportional to its share of the total arrival rate, floored. With no
    load at all the pool is split evenly.
    """
    if not 0 <= rrh_index < config.num_rrh:
        raise ConfigError(f"rrh_index {rrh_index} out of range [0, {config.num_rrh})")
    if total_servers < 0 or total_servers > config.max_servers:
        raise ConfigError(f"total_servers must lie in [0, {config.max_servers}]")
    lam_total = config.total_arrival_rate
    if lam_total == 0.0:
        return total_servers // config.num_rrh
    share = config.arrival_rates[rrh_index] / lam_total * total_servers
    # guard floor() against 9.999999 style round-off of exact integers
    return int(math.floor(share + 1e-9))


def per_rrh_allocation(config: SystemConfig, total_servers: int) -> tuple[int, ...]:
    return tuple(per_rrh_servers(config, total_servers, j) for j in range(config.num_rrh))


def table_one(arrival_rate: float = 10.0, **overrides) -> SystemConfig:
    """Evaluation setup: F=10, L=25, N=2, 1/mu=5, equal per-RRH rates."""
    params = dict(
        num_rrh=2,
        max_concurrent=25,
        frame_duration=10.0,
        service_rate=0.2,
        arrival_rates=(arrival_rate, arrival_rate),
    )
    params.update(overrides)
    if "arrival_rates" not in overrides and params["num_rrh"] != 2:
        params["arrival_rates"] = (arrival_rate,) * params["num_rrh"]
    return SystemConfig(**params)


# ---------------------------------------------------------------- file format

_INT_KEYS = ("num_rrh", "max_concurrent", "queue_truncation")
_FLOAT_KEYS = ("frame_duration", "service_rate")
_TOL_KEYS = tuple(f.name for f in fields(Tolerances))
_ALIASES = {"lambda": "arrival_rates"}


def parse_config(text: str, source: str = "<config>") -> SystemConfig:
    """Parse flat ``key = value`` lines.

    ``#`` starts a comment. ``arrival_rates`` (alias ``lambda``) takes a
    comma-separated list, one rate per RRH. ``mean_demand`` may be given
    instead of ``service_rate`` (it is 1/mu). Unknown keys are rejected
    with the offending line number.
    """
    values: dict = {}
    tol_values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "mean_demand":
                values["service_rate"] = 1.0 / float(value)
            elif key == "arrival_rates":
                values[key] = tuple(float(v) for v in value.split(",") if v.strip())
            elif key in _TOL_KEYS:
                tol_values[key] = float(value)
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from None
    if "arrival_rates" in values and "num_rrh" not in values:
        values["num_rrh"] = len(values["arrival_rates"])
    missing = [k for k in ("num_rrh", "max_concurrent", "frame_duration", "service_rate",
                           "arrival_rates") if k not in values]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")
    return SystemConfig(tolerances=Tolerances(**tol_values), **values)


def load_config(path) -> SystemConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def dump_config(config: SystemConfig) -> str:
    """Inverse of :func:`parse_config`; floats use ``repr`` so they round-trip."""
    lines = [
        f"num_rrh = {config.num_rrh}",
        f"max_concurrent = {config.max_concurrent}",
        f"frame_duration = {config.frame_duration!r}",
        f"service_rate = {config.service_rate!r}",
        "arrival_rates = " + ", ".join(repr(x) for x in config.arrival_rates),
        f"queue_truncation = {config.queue_truncation}",
    ]
    for f in fields(Tolerances):
        lines.append(f"{f.name} = {getattr(config.tolerances, f.name)!r}")
    return "\n".join(lines) + "\n"

