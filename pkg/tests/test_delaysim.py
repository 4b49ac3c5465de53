import numpy as np
import pytest

from ptpkit.delaysim import (
    TM1_MIX,
    DelayEmpirics,
    TrafficScenario,
    order_statistic_moments,
    read_delays_csv,
    sample_packet_bits,
    simulate_cascade,
    write_delays_csv,
)
from ptpkit.errors import ConfigError, UnstableQueueError


def scenario(load, n_switches=10, mix=TM1_MIX):
    return TrafficScenario(
        n_switches=n_switches, link_capacity=1e9, packet_mix=mix,
        load_factor=load,
    )


def pk_mean_wait(sc):
    # independent oracle: stationary M/G/1 mean wait, lam*E[S^2]/(2(1-rho)),
    # summed over the cascade
    s = sc.sizes_bits / sc.link_capacity
    es2 = float(np.sum(sc.fractions * s**2))
    lam = sc.arrival_rate
    per_switch = lam * es2 / (2 * (1 - sc.load_factor))
    return sc.n_switches * per_switch


def test_zero_load_all_zero():
    emp = simulate_cascade(scenario(0.0), 100, seed=1)
    assert np.all(emp.samples == 0.0)
    assert emp.mean == 0.0


def test_packet_mix_fractions_match_table():
    sc = scenario(0.4)
    rng = np.random.default_rng(3)
    bits = sample_packet_bits(rng, sc, 1_000_000)
    for size_bytes, frac in TM1_MIX:
        got = np.mean(bits == size_bytes * 8)
        assert abs(got - frac) < 0.01


def test_heavier_load_means_longer_delays():
    lo = simulate_cascade(scenario(0.2), 30_000, seed=11)
    hi = simulate_cascade(scenario(0.8), 30_000, seed=11)
    assert hi.mean > lo.mean


def test_mean_against_pollaczek_khinchine():
    sc = scenario(0.4, n_switches=5)
    emp = simulate_cascade(sc, 60_000, seed=5)
    se = np.sqrt(emp.variance / len(emp))
    assert abs(emp.mean - pk_mean_wait(sc)) < 4 * se


def test_determinism_and_nonnegativity():
    a = simulate_cascade(scenario(0.6), 2_000, seed=42)
    b = simulate_cascade(scenario(0.6), 2_000, seed=42)
    c = simulate_cascade(scenario(0.6), 2_000, seed=43)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    assert np.all(a.samples >= 0)


def test_sum_decomposition():
    emp = simulate_cascade(scenario(0.5, n_switches=4), 500, seed=9,
                           keep_per_switch=True)
    assert emp.per_switch.shape == (500, 4)
    assert np.array_equal(emp.samples, emp.per_switch.sum(axis=1))


def test_config_errors():
    with pytest.raises(UnstableQueueError):
        scenario(1.0)
    with pytest.raises(ConfigError):
        TrafficScenario(packet_mix=())
    with pytest.raises(ConfigError):
        TrafficScenario(packet_mix=((64, 0.5), (576, 0.6)))
    with pytest.raises(ConfigError):
        TrafficScenario(n_switches=0)
    with pytest.raises(ConfigError):
        simulate_cascade(scenario(0.2), 0, seed=1)


def test_empirics_consistency_guard():
    with pytest.raises(ConfigError):
        DelayEmpirics(np.array([1.0, 2.0]), 999.0, 0.25, "bad")
    with pytest.raises(ConfigError):
        DelayEmpirics.from_samples(np.array([-1.0, 2.0]), "neg")


def exp_order_stat_means(P, rate=1.0):
    # E[w_(k)] = (1/rate) * sum_{j=P-k+1..P} 1/j
    return np.array(
        [sum(1.0 / j for j in range(P - k + 1, P + 1)) / rate for k in range(1, P + 1)]
    )


def test_order_stat_means_exponential():
    rng = np.random.default_rng(17)
    pool = DelayEmpirics.from_samples(rng.exponential(1.0, 400_000), "exp")
    osm = order_statistic_moments(pool, pool, P=3, n_mc=100_000, seed=2)
    expected = exp_order_stat_means(3)
    assert np.allclose(osm.mu1, expected, rtol=0.02)
    assert np.allclose(osm.mu2, expected, rtol=0.02)


def test_cross_covariance_near_zero():
    rng = np.random.default_rng(19)
    pool = DelayEmpirics.from_samples(rng.exponential(1.0, 100_000), "exp")
    n_mc = 50_000
    osm = order_statistic_moments(pool, pool, P=4, n_mc=n_mc, seed=3)
    se = np.sqrt(np.outer(np.diag(osm.S1), np.diag(osm.S2)) / n_mc)
    assert np.all(np.abs(osm.S12) <= 5 * se)


def test_degenerate_constant_pool():
    pool = DelayEmpirics.from_samples(np.full(5_000, 2.5), "const")
    osm = order_statistic_moments(pool, pool, P=3, n_mc=2_000, seed=4)
    assert np.allclose(osm.mu1, 2.5)
    assert np.allclose(osm.S1, 0.0)


def test_osm_config_errors():
    pool = DelayEmpirics.from_samples(np.ones(2_000), "ones")
    with pytest.raises(ConfigError):
        order_statistic_moments(pool, pool, P=0, n_mc=2_000, seed=1)
    with pytest.raises(ConfigError):
        order_statistic_moments(pool, pool, P=2, n_mc=10, seed=1)
    small = DelayEmpirics.from_samples(np.ones(3), "small")
    with pytest.raises(ConfigError):
        order_statistic_moments(small, small, P=5, n_mc=2_000, seed=1)


def test_delays_csv_round_trip(tmp_path):
    emp = simulate_cascade(scenario(0.3), 200, seed=8)
    path = tmp_path / "delays.csv"
    write_delays_csv(emp.samples, path)
    back = read_delays_csv(path)
    assert np.array_equal(back, emp.samples)
