"""Server-hour savings of long-term and short-term multiplexing."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, per_rrh_allocation
from .errors import ConfigError, InfeasibleError, UnstableError
from .latency import queuing_time_cdf, rrh_queuing_mixture
from .markov import solve_rrh

__all__ = [
    "LONG_TERM",
    "SHORT_TERM",
    "SavingsReport",
    "stable_min_servers",
    "delay_target_met",
    "long_term_min_servers",
    "long_term_savings",
    "short_term_expected_savings",
    "CSV_FIELDS",
    "report_row",
    "write_reports_csv",
]

LONG_TERM = "long_term"
SHORT_TERM = "short_term"


@dataclass(frozen=True)
class SavingsReport:
    policy: str
    servers_provisioned: int | None
    normalized_cost: float
    savings: float
    upper_bound: float


def _upper_bound(config: SystemConfig) -> float:
    return 1.0 - config.total_arrival_rate / (config.max_servers * config.mu_f)


def _split_ok(config: SystemConfig, c: int) -> bool:
    alloc = per_rrh_allocation(config, c)
    if config.total_arrival_rate == 0.0:
        return all(s >= 1 for s in alloc)
    return all(s >= 1 and lam < s * config.mu_f
               for s, lam in zip(alloc, config.arrival_rates) if lam > 0)


def stable_min_servers(config: SystemConfig) -> int:
    """Smallest pool whose proportional split leaves every loaded RRH stable.

    With no load at all every RRH still gets one server.
    """
    lam_total = config.total_arrival_rate
    for c in range(1, config.max_servers + 1):
        if lam_total >= c * config.mu_f:
            continue
        if _split_ok(config, c):
            return c
    raise InfeasibleError("no stable pool size up to the air-interface limit", best=None)


def delay_target_met(config: SystemConfig, c: int, tau: float, zeta: float,
                     weighting: str = "per_request") -> tuple[bool, float]:
    """(every RRH has Pr(t2 < tau) >= zeta, worst such probability)."""
    worst = 1.0
    alloc = per_rrh_allocation(config, c)
    for j, lam in enumerate(config.arrival_rates):
        if lam == 0.0:
            continue
        try:
            mix = rrh_queuing_mixture(config, j, servers=alloc[j], weighting=weighting)
        except UnstableError:
            return False, 0.0
        worst = min(worst, queuing_time_cdf(mix, tau))
    return worst >= zeta, worst


def long_term_min_servers(config: SystemConfig, tau: float, zeta: float,
                          weighting: str = "per_request") -> int:
    """Smallest pool size meeting Pr(t2 < tau) >= zeta at every RRH."""
    if not 0.0 < zeta < 1.0:
        raise ConfigError("zeta must lie in (0, 1)")
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    best = 0.0
    for c in range(stable_min_servers(config), config.max_servers + 1):
        ok, worst = delay_target_met(config, c, tau, zeta, weighting)
        best = max(best, worst)
        if ok:
            return c
    raise InfeasibleError(
        f"Pr(t2 < {tau:g}) >= {zeta:g} not reachable with up to {config.max_servers} servers "
        f"(best {best:.6g})", best=best)


def long_term_savings(config: SystemConfig, tau: float, zeta: float,
                      weighting: str = "per_request") -> SavingsReport:
    c = long_term_min_servers(config, tau, zeta, weighting)
    cost = c / config.max_servers
    return SavingsReport(LONG_TERM, c, cost, 1.0 - cost, _upper_bound(config))


def short_term_expected_savings(config: SystemConfig) -> SavingsReport:
    """Expected fraction of the L*N servers left off when each frame powers
    on min(L, l_j) servers per RRH."""
    L = config.max_concurrent
    lim = L * config.mu_f
    for j, lam in enumerate(config.arrival_rates):
        if lam >= lim:
            raise UnstableError(f"RRH {j}: arrival rate {lam:g} per frame >= air-interface "
                                f"capacity {lim:g}")
    costs = []
    for j, lam in enumerate(config.arrival_rates):
        if lam == 0.0:
            costs.append(0.0)
            continue
        post = solve_rrh(config, j, servers=L).post_arrival.probs
        busy = np.minimum(np.arange(len(post)), L)
        costs.append(float(busy @ post) / L)
    cost = float(np.mean(costs))  # equal L at every RRH
    return SavingsReport(SHORT_TERM, None, cost, 1.0 - cost, _upper_bound(config))


CSV_FIELDS = ("policy", "lambda_total", "rho_bbu", "tau", "zeta", "frame", "servers",
              "normalized_cost", "savings", "upper_bound")


def report_row(report: SavingsReport, config: SystemConfig, tau=None, zeta=None) -> dict:
    return {
        "policy": report.policy,
        "lambda_total": config.total_arrival_rate,
        "rho_bbu": 1.0 - report.upper_bound,
        "tau": tau,
        "zeta": zeta,
        "frame": config.frame_duration,
        "servers": report.servers_provisioned,
        "normalized_cost": report.normalized_cost,
        "savings": report.savings,
        "upper_bound": report.upper_bound,
    }


def write_reports_csv(rows, fh=None) -> str:
    buf = fh or io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                    for k in CSV_FIELDS})
    return buf.getvalue() if fh is None else ""
