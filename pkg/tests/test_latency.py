import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.optimize import brentq
from scipy.stats import gamma

from conftest import ks_distance_mixed, single_rrh
from cranmux import ConfigError, ConvergenceError, table_one
from cranmux.latency import (LatencyCdf, LatencyMixture, percentile, queuing_percentiles,
                             queuing_time_cdf, queuing_time_mixture, rrh_queuing_mixture,
                             system_time_cdf, t2_cdf, total_time_cdf, write_cdf_csv)
from cranmux.markov import OccupancyDistribution
from cranmux.simulator import SimulationConfig, simulate


def _stationary(p):
    p = np.asarray(p, dtype=np.float64)
    return OccupancyDistribution(p / p.sum(), "stationary_pre_arrival")


# ------------------------------------------------------------------ mixture

def test_empty_start_with_many_servers_has_no_delay():
    pi = _stationary([1, 0, 0, 0, 0])
    mix = queuing_time_mixture(pi, 3.0, servers=4, mu=1.0, frame=1.0)
    assert mix.atom_weight == pytest.approx(1.0)
    assert mix.components == ()


def test_zero_rate_is_pure_atom():
    pi = _stationary([0.2, 0.3, 0.5])
    mix = queuing_time_mixture(pi, 0.0, servers=1, mu=1.0, frame=1.0)
    assert mix.atom_weight == 1.0 and mix.components == ()


def test_known_small_mixture():
    # one server, start empty, lambda=1, q_max=3: positions 1,2,3 reached w.p.
    # Pr(v>=1), Pr(v>=2), Pr(v>=3)
    pi = _stationary([1, 0, 0, 0])
    mix = queuing_time_mixture(pi, 1.0, servers=1, mu=2.0, frame=1.0)
    reach = [1 - math.exp(-1), 1 - 2 * math.exp(-1), 1 - 2.5 * math.exp(-1)]
    total = sum(reach)
    assert mix.atom_weight == pytest.approx(reach[0] / total, rel=1e-12)
    assert [k for _, k, _ in mix.components] == [1, 2]
    assert mix.components[0][0] == pytest.approx(reach[1] / total, rel=1e-12)
    assert mix.rate_common == 2.0


def test_per_frame_weighting_known_small_mixture():
    # same setup, each frame with arrivals spreads one unit evenly over its positions
    e = math.exp(-1)
    pr = {1: e, 2: e / 2, 3: 1 - 2.5 * e}
    pos = {1: pr[1] + pr[2] / 2 + pr[3] / 3, 2: pr[2] / 2 + pr[3] / 3, 3: pr[3] / 3}
    total = sum(pos.values())
    mix = queuing_time_mixture(_stationary([1, 0, 0, 0]), 1.0, 1, 2.0, 1.0, weighting="per_frame")
    assert mix.atom_weight == pytest.approx(pos[1] / total, rel=1e-12)
    assert mix.components[1][0] == pytest.approx(pos[3] / total, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=60), st.floats(0.01, 40.0),
       st.integers(1, 30), st.sampled_from(["per_request", "per_frame"]))
def test_mixture_normalized_and_canonical(weights, lam, servers, weighting):
    w = np.array(weights)
    if w.sum() == 0:
        w[0] = 1.0
    mix = queuing_time_mixture(_stationary(w), lam, servers, 0.2, 10.0, weighting)
    assert mix.atom_weight + mix.weights.sum() == pytest.approx(1.0, abs=1e-9)
    shapes = [k for _, k, _ in mix.components]
    assert all(k > 0 for k in shapes) and len(set(shapes)) == len(shapes)
    assert all(r == servers * 0.2 for _, _, r in mix.components)


def test_mixture_rejects_post_arrival_input():
    with pytest.raises(ConfigError):
        queuing_time_mixture(OccupancyDistribution(np.ones(3) / 3, "post_arrival"), 1, 1, 1, 1)


# ---------------------------------------------------------------------- cdf

def test_cdf_at_zero_is_atom():
    mix = LatencyMixture(0.3, ((0.7, 2, 1.5),), 1.5)
    assert queuing_time_cdf(mix, 0.0) == pytest.approx(0.3)
    assert queuing_time_cdf(mix, -1.0) == 0.0


def test_cdf_exponential_component():
    mix = LatencyMixture(0.0, ((1.0, 1, 1.0),), 1.0)
    assert queuing_time_cdf(mix, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_cdf_tends_to_one():
    mix = rrh_queuing_mixture(table_one(10), 0, 20)
    assert queuing_time_cdf(mix, 1e6) == pytest.approx(1.0, abs=1e-9)


def test_cdf_matches_scipy_gamma_mixture():
    mix = rrh_queuing_mixture(table_one(10), 0, 14)
    t = np.linspace(0, 80, 41)
    ref = mix.atom_weight + sum(w * gamma.cdf(t, k, scale=1 / r) for w, k, r in mix.components)
    assert np.abs(queuing_time_cdf(mix, t) - ref).max() < 1e-12


def test_cdf_dominance_in_load():
    cfg = table_one()
    grid = np.linspace(0, 40, 81)
    curves = [queuing_time_cdf(rrh_queuing_mixture(cfg.with_rates([lam, lam]), 0, servers=10),
                               grid) for lam in (2.0, 6.0, 10.0, 14.0, 18.0)]
    for lo, hi in zip(curves, curves[1:]):
        assert np.all(hi <= lo + 1e-12)


def test_cdf_dominance_in_servers():
    cfg = table_one(10)
    grid = np.linspace(0, 40, 81)
    curves = [queuing_time_cdf(rrh_queuing_mixture(cfg, 0, servers=s), grid)
              for s in range(6, 26)]
    for lo, hi in zip(curves, curves[1:]):
        assert np.all(hi >= lo - 1e-12)


# --------------------------------------------------------------- percentile

def test_percentile_atom_covers():
    mix = LatencyMixture(0.995, ((0.005, 3, 1.0),), 1.0)
    assert percentile(mix, 0.99) == 0.0


def test_percentile_matches_root_finder():
    mix = rrh_queuing_mixture(table_one(10), 0, 20)
    p = percentile(t2_cdf(mix, 10.0), 0.99, tol=1e-12)
    ref = brentq(lambda t: queuing_time_cdf(mix, t) - 0.99, 1e-9, 1000.0, xtol=1e-13)
    assert p == pytest.approx(ref, abs=1e-9)
    assert queuing_time_cdf(mix, p) >= 0.99


def test_percentile_plateau_is_an_error():
    stuck = LatencyCdf(lambda t: np.full(np.shape(t), 0.5), "t2")
    with pytest.raises(ConvergenceError):
        percentile(stuck, 0.9, max_doublings=20)


@pytest.mark.parametrize("zeta", [0.0, 1.0, -0.1])
def test_percentile_zeta_range(zeta):
    with pytest.raises(ConfigError):
        percentile(LatencyMixture(1.0, (), 1.0), zeta)


def test_queuing_percentiles_idle_rrh_is_zero():
    cfg = table_one(arrival_rates=(10.0, 0.0))
    out = queuing_percentiles(cfg, 7, [0.99])
    assert out[1, 0] == 0.0 and out[0, 0] > 0.0


# ----------------------------------------------------- system and total time

def test_system_time_pure_atom_is_exponential():
    cdf = system_time_cdf(LatencyMixture(1.0, (), 2.0), mu=0.7)
    t = np.linspace(0, 20, 11)
    assert np.allclose(cdf(t), 1 - np.exp(-0.7 * t), atol=1e-15)
    assert cdf.kind == "t2+t3"


def test_system_time_hypoexponential_value():
    cdf = system_time_cdf(LatencyMixture(0.0, ((1.0, 1, 2.0),), 2.0), mu=1.0)
    expected = 1 - 2 * math.exp(-1) + math.exp(-2)
    assert cdf(1.0) == pytest.approx(expected, abs=1e-12)
    assert cdf(1.0) == pytest.approx(0.399576, abs=5e-7)


def test_system_time_equal_rates_is_erlang():
    mix = LatencyMixture(0.0, ((1.0, 3, 0.5),), 0.5)
    cdf = system_time_cdf(mix, mu=0.5)
    t = np.linspace(0, 40, 21)
    assert np.allclose(cdf(t), gamma.cdf(t, 4, scale=2.0), atol=1e-13)


def _numeric_system_cdf(mix, mu, t):
    """Atom term plus int_0^t f_t2(x) (1 - exp(-mu (t - x))) dx by adaptive quadrature."""
    w, k, r = mix.weights, mix.shapes, mix.rate_common

    def integrand(x):
        return (w * gamma.pdf(x, k, scale=1 / r)).sum() * -math.expm1(-mu * (t - x))

    body = quad_vec(integrand, 0.0, t, epsabs=1e-12, epsrel=0.0, limit=4000)[0] if t > 0 else 0.0
    return mix.atom_weight * -math.expm1(-mu * t) + body


@pytest.mark.parametrize("lam,c", [(10.0, 20), (10.0, 14), (1.0, 2)])
def test_system_time_closed_form_vs_convolution(lam, c):
    cfg = table_one(lam)
    mix = rrh_queuing_mixture(cfg, 0, c)
    cdf = system_time_cdf(mix, cfg.service_rate)
    for t in np.linspace(0, 10 * cfg.frame_duration, 26):
        assert abs(cdf(t) - _numeric_system_cdf(mix, cfg.service_rate, t)) < 1e-7


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20), st.floats(0.0, 1.0),
       st.integers(1, 12), st.floats(0.05, 3.0))
def test_system_time_monotone_and_proper(ws, atom, servers, mu):
    total = sum(ws) + atom
    if total == 0:
        atom, total = 1.0, 1.0
    comps = tuple((w / total, k + 1, servers * mu) for k, w in enumerate(ws))
    mix = LatencyMixture(atom / total, comps, servers * mu)
    cdf = system_time_cdf(mix, mu)
    grid = np.linspace(0, 200.0 / mu, 1000)
    vals = cdf(grid)
    assert vals[0] == 0.0
    assert np.all(np.diff(vals) >= -1e-12)
    assert cdf(1e4 / mu) == pytest.approx(1.0, abs=1e-9)


def test_total_time_of_zero_system_time_is_uniform():
    step = LatencyCdf(lambda t: np.ones(np.shape(t)), "t2+t3")
    total = total_time_cdf(step, frame=4.0)
    t = np.array([0.0, 1.0, 2.0, 3.9, 4.0, 9.0])
    assert np.allclose(total(t), np.minimum(t / 4.0, 1.0), atol=1e-12)
    assert total.kind == "t1+t2+t3"


def test_total_time_closed_form_without_queuing():
    mu, F = 2.0, 1.0
    total = total_time_cdf(system_time_cdf(LatencyMixture(1.0, (), mu), mu), F)
    expected = 1 - (1 - math.exp(-mu * F)) / (mu * F)
    assert total(F) == pytest.approx(expected, abs=1e-8)
    assert total(F) == pytest.approx(0.567668, abs=5e-7)


def test_total_time_below_system_time():
    cfg = table_one(10)
    sys_cdf = system_time_cdf(rrh_queuing_mixture(cfg, 0, 16), cfg.service_rate, 10.0)
    total = total_time_cdf(sys_cdf, 10.0)
    grid = np.linspace(0, 150, 301)
    assert np.all(total(grid) <= sys_cdf(grid) + 1e-12)
    assert np.all(np.diff(total(grid)) >= -1e-12)
    assert total(1e4) == pytest.approx(1.0, abs=1e-8)


# ------------------------------------------------------ simulation oracles

@pytest.mark.slow
def test_small_instance_per_request_delay_matches_simulation():
    servers, M, lam, mu, F = 1, 2, 0.5, 2.0, 1.0
    cfg = single_rrh(lam, servers, mu, F, truncation=M)
    mix = rrh_queuing_mixture(cfg, 0, servers=servers)
    res = simulate(SimulationConfig(cfg, "long_term", servers, 1_000_000, 1000, seed=5,
                                    queue_cap=servers + M, record=("t2",)))
    assert ks_distance_mixed(res.t2_samples, lambda t: queuing_time_cdf(mix, t)) < 0.005


@pytest.mark.slow
def test_table_one_delay_matches_single_rrh_simulation():
    cfg = single_rrh(10.0, 10, 0.2, 10.0, max_concurrent=25)
    mix = rrh_queuing_mixture(cfg, 0, servers=10)
    res = simulate(SimulationConfig(cfg, "long_term", 10, 1_000_000, 1000, seed=9,
                                    record=("t1", "t2", "t3")))
    assert res.transfers_blocked == 0
    assert ks_distance_mixed(res.t2_samples, lambda t: queuing_time_cdf(mix, t)) < 0.01
    total = total_time_cdf(system_time_cdf(mix, 0.2, 10.0), 10.0)
    sample = res.t1_samples + res.t2_samples + res.t3_samples
    sub = sample[:: max(1, sample.size // 200_000)]
    assert ks_distance_mixed(sub, total, grid_points=4001) < 0.01


def test_cdf_csv_export(tmp_path):
    mix = rrh_queuing_mixture(table_one(10), 0, 20)
    cdf = t2_cdf(mix, 10.0)
    write_cdf_csv(cdf, [0.0, 1.0, 5.0], tmp_path / "cdf.csv")
    lines = (tmp_path / "cdf.csv").read_text().splitlines()
    assert lines[0] == "t,t2"
    assert float(lines[1].split(",")[1]) == pytest.approx(mix.atom_weight)
