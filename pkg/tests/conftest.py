"""Shared independent oracles for the test suite.

Nothing here calls into the analytical code: the death-process kernel is
checked against a matrix exponential and against brute-force sampling,
and the chain against direct frame sampling.
"""
import numpy as np
import pytest
from scipy.linalg import expm

from cranmux import SystemConfig


def death_generator_expm(servers, q_max, mu_f):
    """Exact one-frame law of the pure-death process with rate min(n, c)*muF."""
    n = q_max + 1
    G = np.zeros((n, n))
    for k in range(1, n):
        r = min(k, servers) * mu_f
        G[k, k - 1] = r
        G[k, k] = -r
    return expm(G)


def sample_frame_departures(start, servers, mu_f, rng):
    """Occupancy left after one frame, by racing exponential completions."""
    n = np.array(start, dtype=np.int64, copy=True)
    t = np.zeros(n.shape)
    active = n > 0
    while active.any():
        rate = np.minimum(n[active], servers) * mu_f
        t[active] += rng.exponential(1.0, active.sum()) / rate
        done = t[active] < 1.0
        idx = np.flatnonzero(active)
        n[idx[done]] -= 1
        active[idx[~done]] = False
        active &= n > 0
    return n


def sample_transitions(i, lam, servers, q_max, mu_f, size, rng):
    """Next-frame occupancy from state i: Poisson arrivals clipped at q_max, then departures."""
    v = rng.poisson(lam, size)
    occupied = np.minimum(i + v, q_max)
    return sample_frame_departures(occupied, servers, mu_f, rng)


def ks_distance_mixed(samples, cdf, grid_points=20_001):
    """sup |F_emp - F| for a law that may carry an atom at zero.

    Exact when the sample has at most ``grid_points`` distinct values.
    Otherwise both CDFs are monotone, so bracketing every cell of a
    quantile grid gives a rigorous upper bound on the distance.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    uniq = np.unique(x)
    if uniq.size > grid_points:
        uniq = np.unique(np.concatenate(([0.0], np.quantile(x, np.linspace(0, 1, grid_points)))))
    F = np.asarray(cdf(uniq))
    F_before = np.where(uniq > 0, F, 0.0)      # model CDF just left of each point
    right = np.searchsorted(x, uniq, side="right") / n
    left = np.searchsorted(x, uniq, side="left") / n
    d = max(np.abs(right - F).max(), np.abs(left - F_before).max())
    # open cells between consecutive grid points
    d = max(d, (left[1:] - F[:-1]).max(initial=0.0), (F_before[1:] - right[:-1]).max(initial=0.0))
    return float(d)


def single_rrh(lam, servers, mu, frame, max_concurrent=None, truncation=200):
    """One RRH with its own pool, so the chain's server share is exactly ``servers``."""
    return SystemConfig(num_rrh=1, max_concurrent=max_concurrent or servers,
                        frame_duration=frame, service_rate=mu, arrival_rates=(lam,),
                        queue_truncation=truncation)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """Echo the one-line verdicts recorded by the acceptance tests."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            for name, value in rep.user_properties:
                if name == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
