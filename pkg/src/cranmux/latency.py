"""Queuing, system and total delay laws of a scheduling request.

The queuing delay t2 of an SR that lands at position l of its RRH's queue
is zero when l <= c and Erlang(l - c, c*mu) otherwise, so the stationary
law is an atom at zero plus a finite Erlang mixture with a common rate.
Adding the Exp(mu) service time t3 has a closed form; the frame-alignment
delay t1 ~ U[0, F] is folded in by quadrature.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammainc

from .config import SystemConfig
from .errors import ConfigError, ConvergenceError, UnstableError
from .markov import STATIONARY, OccupancyDistribution, arrival_matrix, solve_rrh

__all__ = [
    "T2",
    "SYSTEM",
    "TOTAL",
    "LatencyMixture",
    "LatencyCdf",
    "queuing_time_mixture",
    "queuing_time_cdf",
    "percentile",
    "system_time_cdf",
    "total_time_cdf",
    "rrh_queuing_mixture",
    "queuing_percentiles",
    "prob_delay_below",
    "write_cdf_csv",
]

T2 = "t2"
SYSTEM = "t2+t3"
TOTAL = "t1+t2+t3"
WEIGHTINGS = ("per_request", "per_frame")

# composite Gauss-Legendre rule for the t1 smoothing; the integrand is
# analytic on the open interval, two 24-point panels reach round-off
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_GL_PANELS = 2
_EVAL_BLOCK = 4096
# components lighter than this are skipped when evaluating CDFs
_NEGLIGIBLE = 1e-16


@dataclass(frozen=True)
class LatencyMixture:
    """Atom at zero plus Erlang(shape, rate_common) components."""

    atom_weight: float
    components: tuple[tuple[float, int, float], ...]
    rate_common: float

    def significant(self):
        """(weights, shapes) of components that can move a CDF by more than round-off."""
        w, k = self.weights, self.shapes
        keep = w > _NEGLIGIBLE
        return w[keep], k[keep]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _, _ in self.components], dtype=np.float64)

    @property
    def shapes(self) -> np.ndarray:
        return np.array([k for _, k, _ in self.components], dtype=np.float64)

    def mean(self) -> float:
        if not self.components:
            return 0.0
        return float(self.weights @ self.shapes / self.rate_common)


class LatencyCdf:
    """Vectorized CDF evaluator tagged with the delay it describes."""

    def __init__(self, evaluate: Callable[[np.ndarray], np.ndarray], kind: str,
                 atom: float = 0.0, scale: float = 1.0, mixture: LatencyMixture | None = None):
        self._evaluate = evaluate
        self.kind = kind
        self.atom = atom
        self.scale = scale
        self.mixture = mixture

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.where(t < 0.0, 0.0, self._evaluate(np.maximum(t, 0.0)))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------- mixture

def _position_weights_per_request(pi: np.ndarray, lam: float) -> np.ndarray:
    """Mass of arriving SRs at each queue position l = 0..q_max.

    From state q, position l (q < l <= q_max) is taken in every frame with
    at least l - q arrivals. Overflow beyond q_max is blocked.
    """
    n = len(pi)
    from scipy.stats import poisson

    reach = poisson.sf(np.arange(n) - 1, lam)  # reach[k] = Pr(v >= k)
    reach[0] = 0.0
    return np.convolve(pi, reach)[:n]


def _position_weights_per_frame(pi: np.ndarray, lam: float) -> np.ndarray:
    """Each frame with q -> q' arrivals spreads unit weight evenly over q+1..q'."""
    n = len(pi)
    W = arrival_matrix(lam, n - 1)
    out = np.zeros(n)
    for q in range(n - 1):
        if pi[q] == 0.0:
            continue
        span = np.arange(1, n - q, dtype=np.float64)
        g = pi[q] * W[q, q + 1:] / span
        # position l gets the sum over q' >= l
        out[q + 1:] += np.cumsum(g[::-1])[::-1]
    return out


def queuing_time_mixture(pi: OccupancyDistribution, lam: float, servers: int, mu: float,
                         frame: float | None = None,
                         weighting: str = "per_request") -> LatencyMixture:
    """Stationary queuing-delay law of an arriving SR.

    ``weighting="per_request"`` averages over SRs (every arrival counts
    once). ``"per_frame"`` gives each frame with arrivals equal weight and
    picks a uniform position among that frame's arrivals.
    """
    if pi.kind != STATIONARY:
        raise ConfigError("queuing_time_mixture expects the pre-arrival stationary distribution")
    if servers < 1:
        raise ConfigError("servers must be >= 1")
    if mu <= 0:
        raise ConfigError("mu must be > 0")
    rate = servers * mu
    if lam == 0.0:
        return LatencyMixture(1.0, (), rate)
    if weighting == "per_request":
        pos = _position_weights_per_request(pi.probs, lam)
    elif weighting == "per_frame":
        pos = _position_weights_per_frame(pi.probs, lam)
    else:
        raise ConfigError(f"weighting must be one of {WEIGHTINGS}")
    total = pos.sum()
    if total <= 0.0:
        return LatencyMixture(1.0, (), rate)
    pos = pos / total
    atom = float(pos[: servers + 1].sum())
    comps = tuple((float(w), int(l - servers), rate)
                  for l, w in enumerate(pos) if l > servers and w > 0.0)
    return LatencyMixture(atom, comps, rate)


def queuing_time_cdf(mix: LatencyMixture, t):
    t = np.asarray(t, dtype=np.float64)
    out = np.full(t.shape, mix.atom_weight)
    if mix.components:
        w, k = mix.significant()
        out = out + (w * gammainc(k, mix.rate_common * t[..., None])).sum(axis=-1)
    out = np.where(t < 0.0, 0.0, np.minimum(out, 1.0))
    return float(out) if out.ndim == 0 else out


def t2_cdf(mix: LatencyMixture, frame: float = 1.0) -> LatencyCdf:
    return LatencyCdf(lambda t: queuing_time_cdf(mix, t), T2, atom=mix.atom_weight,
                      scale=frame, mixture=mix)


# ---------------------------------------------------------------- percentile

def percentile(cdf, zeta: float, tol: float = 1e-9, scale: float | None = None,
               max_doublings: int = 200) -> float:
    """Smallest t with cdf(t) >= zeta, to within ``tol``.

    Accepts a LatencyCdf or a LatencyMixture (treated as the t2 law).
    """
    if not 0.0 < zeta < 1.0:
        raise ConfigError("zeta must lie in (0, 1)")
    if isinstance(cdf, LatencyMixture):
        cdf = t2_cdf(cdf)
    if cdf(0.0) >= zeta:
        return 0.0
    scale = scale if scale is not None else getattr(cdf, "scale", 1.0)
    hi = 10.0 * scale
    for _ in range(max_doublings):
        if cdf(hi) >= zeta:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"CDF stays below {zeta} up to t={hi:g}")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cdf(mid) >= zeta:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------- t2+t3, t1+t2+t3

def _erlang_plus_exp_cdf(k: np.ndarray, a: float, b: float, t: np.ndarray) -> np.ndarray:
    """CDF of Erlang(k, a) + Exp(b), a >= b, for each k (last axis)."""
    tt = t[..., None]
    if a == b:
        return gammainc(k + 1.0, b * tt)
    if a < b:
        raise ConfigError("closed form needs the Erlang rate >= the service rate")
    d = a - b
    lower = gammainc(k, d * tt)
    with np.errstate(divide="ignore"):
        log_corr = -b * tt + k * math.log(a / d) + np.log(lower)
    return gammainc(k, a * tt) - np.exp(log_corr)


def system_time_cdf(mix: LatencyMixture, mu: float, frame: float = 1.0) -> LatencyCdf:
    """Law of t2 + t3 with t3 ~ Exp(mu) independent of t2."""
    if mu <= 0:
        raise ConfigError("mu must be > 0")

    w, k = mix.significant()

    def evaluate(t):
        t = np.asarray(t, dtype=np.float64)
        out = mix.atom_weight * -np.expm1(-mu * t)
        if w.size:
            out = out + (w * _erlang_plus_exp_cdf(k, mix.rate_common, mu, t)).sum(axis=-1)
        return out

    return LatencyCdf(evaluate, SYSTEM, atom=0.0, scale=frame, mixture=mix)


def total_time_cdf(sys: LatencyCdf, frame: float) -> LatencyCdf:
    """Add an independent U[0, frame] delay: (1/F) int_0^min(t,F) CDF_sys(t-x) dx."""
    if frame <= 0:
        raise ConfigError("frame must be > 0")
    edges = np.linspace(0.0, 1.0, _GL_PANELS + 1)
    half = 0.5 * np.diff(edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    unit_nodes = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    unit_weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()

    def evaluate(t):
        t = np.asarray(t, dtype=np.float64)
        flat = np.atleast_1d(t).ravel()
        out = np.empty(flat.shape)
        for s in range(0, flat.size, _EVAL_BLOCK):
            blk = flat[s:s + _EVAL_BLOCK]
            width = np.minimum(blk, frame)
            vals = np.asarray(sys(blk[:, None] - width[:, None] * unit_nodes[None, :]))
            out[s:s + _EVAL_BLOCK] = (vals * unit_weights[None, :]).sum(axis=1) * width / frame
        return out.reshape(t.shape)

    return LatencyCdf(evaluate, TOTAL, atom=0.0, scale=frame,
                      mixture=getattr(sys, "mixture", None))


# ------------------------------------------------------------ system helpers

def rrh_queuing_mixture(config: SystemConfig, rrh_index: int, total_servers: int | None = None,
                        servers: int | None = None,
                        weighting: str = "per_request") -> LatencyMixture:
    """Queuing-delay mixture for one RRH of the pool (raises UnstableError)."""
    chain = solve_rrh(config, rrh_index, total_servers=total_servers, servers=servers)
    return queuing_time_mixture(chain.stationary, chain.lam, chain.servers, config.service_rate,
                                config.frame_duration, weighting)


def queuing_percentiles(config: SystemConfig, total_servers: int, zetas,
                        weighting: str = "per_request") -> np.ndarray:
    """Array [rrh, zeta] of t2 percentiles for a pool of ``total_servers``.

    RRHs without load have zero delay. Raises UnstableError if any loaded
    RRH cannot keep up with its share of the pool.
    """
    zetas = list(zetas)
    out = np.zeros((config.num_rrh, len(zetas)))
    tol = config.tolerances.percentile_tol
    for j, lam in enumerate(config.arrival_rates):
        if lam == 0.0:
            continue
        mix = rrh_queuing_mixture(config, j, total_servers, weighting=weighting)
        cdf = t2_cdf(mix, config.frame_duration)
        for z, zeta in enumerate(zetas):
            out[j, z] = percentile(cdf, zeta, tol)
    return out


def prob_delay_below(config: SystemConfig, total_servers: int, tau: float,
                     weighting: str = "per_request") -> float:
    """min over RRHs of Pr(t2 < tau); 0 for an unstable split."""
    worst = 1.0
    for j, lam in enumerate(config.arrival_rates):
        if lam == 0.0:
            continue
        try:
            mix = rrh_queuing_mixture(config, j, total_servers, weighting=weighting)
        except UnstableError:
            return 0.0
        worst = min(worst, queuing_time_cdf(mix, tau))
    return worst


def write_cdf_csv(cdf: LatencyCdf, grid, path) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    vals = np.atleast_1d(cdf(grid))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", cdf.kind])
        for t, v in zip(grid, vals):
            w.writerow([repr(float(t)), repr(float(v))])
