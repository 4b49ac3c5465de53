import numpy as np
import pytest

from ptpkit.baselines import (
    fta_estimate,
    l_estimate,
    l_weights,
    link_sample_mean,
    lower_median_index,
    median_estimate,
)
from ptpkit.delaysim import DelayEmpirics, OrderStatMoments, order_statistic_moments
from ptpkit.errors import ConfigError


def osm_p1(var1, var2, mu1, mu2):
    return OrderStatMoments(
        1,
        np.array([mu1]), np.array([mu2]),
        np.array([[var1]]), np.array([[var2]]), np.array([[0.0]]),
    )


def test_p1_hand_solved_weights():
    # S1=S2=[sigma^2], S12=0: the 2x2 system gives c1=c2=[1/2],
    # eta=(mu2-mu1)/2, MSE=sigma^2/2
    w = l_weights(osm_p1(4.0, 4.0, 1.0, 3.0))
    assert w.c1[0] == pytest.approx(0.5)
    assert w.c2[0] == pytest.approx(0.5)
    assert w.eta_const == pytest.approx(1.0)
    assert w.predicted_mse == pytest.approx(2.0)


def test_p1_estimate_value():
    w = l_weights(osm_p1(1.0, 1.0, 0.7, 0.7))
    assert l_estimate(np.array([3.0]), np.array([1.0]), w) == pytest.approx(1.0)


def test_constraint_sums_force_shift_equivariance():
    rng = np.random.default_rng(3)
    pool = DelayEmpirics.from_samples(rng.exponential(1.0, 50_000), "exp")
    osm = order_statistic_moments(pool, pool, P=5, n_mc=20_000, seed=1)
    w = l_weights(osm)
    assert w.c1.sum() == pytest.approx(0.5, abs=1e-9)
    assert w.c2.sum() == pytest.approx(0.5, abs=1e-9)
    u = rng.exponential(1.0, 5) + 2.0
    v = rng.exponential(1.0, 5) + 2.0
    base = l_estimate(u, v, w)
    shifted = l_estimate(u + 0.25, v - 0.25, w)
    assert shifted == pytest.approx(base + 0.25, abs=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    pool = DelayEmpirics.from_samples(rng.exponential(1.0, 50_000), "exp")
    osm = order_statistic_moments(pool, pool, P=6, n_mc=20_000, seed=2)
    w = l_weights(osm)
    u = rng.exponential(1.0, 6)
    v = rng.exponential(1.0, 6)
    perm = rng.permutation(6)
    assert l_estimate(u, v, w) == pytest.approx(
        l_estimate(u[perm], v[perm[::-1]], w), abs=1e-15
    )


def test_unbiased_on_clean_synthetic_links():
    rng = np.random.default_rng(5)
    pool = DelayEmpirics.from_samples(rng.exponential(1.0, 200_000), "exp")
    P = 5
    osm = order_statistic_moments(pool, pool, P=P, n_mc=50_000, seed=3)
    w = l_weights(osm)
    delta, d = 0.4, 2.0
    n = 10_000
    u = rng.exponential(1.0, (n, P)) + d + delta
    v = rng.exponential(1.0, (n, P)) + d - delta
    ests = np.array([l_estimate(u[i], v[i], w) for i in range(n)])
    se = ests.std() / np.sqrt(n)
    assert abs(ests.mean() - delta) <= 3 * max(se, np.sqrt(w.predicted_mse / n))


def test_predicted_mse_tracks_monte_carlo():
    rng = np.random.default_rng(6)
    pool = DelayEmpirics.from_samples(rng.exponential(1.0, 200_000), "exp")
    P = 5
    osm = order_statistic_moments(pool, pool, P=P, n_mc=60_000, seed=4)
    w = l_weights(osm)
    n = 30_000
    u = rng.exponential(1.0, (n, P))
    v = rng.exponential(1.0, (n, P))
    us = np.sort(u, axis=1)
    vs = np.sort(v, axis=1)
    ests = us @ w.c1 - vs @ w.c2 + w.eta_const
    mc_mse = float(np.mean(ests**2))
    assert w.predicted_mse == pytest.approx(mc_mse, rel=0.07)


def test_singular_covariance_regularization_warns():
    const = DelayEmpirics.from_samples(np.full(5_000, 1.0), "const")
    osm = order_statistic_moments(const, const, P=2, n_mc=2_000, seed=5)
    with pytest.warns(UserWarning):
        w = l_weights(osm)
    assert np.isfinite(w.c1).all() and np.isfinite(w.c2).all()
    # degenerate data still yields the exact offset
    assert l_estimate(np.array([3.0, 3.0]), np.array([1.0, 1.0]), w) == (
        pytest.approx(1.0)
    )


def test_link_sample_mean():
    assert link_sample_mean(np.array([2.0, 4.0]), np.array([0.0, 2.0]),
                            0.3, 0.3) == pytest.approx(1.0)
    assert link_sample_mean(np.zeros(3), np.zeros(3), 0.4, 0.2) == (
        pytest.approx(-0.1)
    )


def test_median_rules():
    assert median_estimate([1.0, 1.2, 5.0]) == 1.2
    assert median_estimate([7.0]) == 7.0
    # even count takes the lower median
    assert median_estimate([4.0, 2.0, 3.0, 1.0]) == 2.0
    assert lower_median_index([5.0, 1.0, 3.0]) == 2


def test_fta_rules():
    assert fta_estimate([1.0, 1.2, 5.0], 1) == pytest.approx(1.2)
    assert fta_estimate([1.0, 2.0, 6.0], 0) == pytest.approx(3.0)
    assert fta_estimate([0.0, 1.0, 2.0, 3.0, 10.0], 1) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        fta_estimate([1.0, 2.0], 1)


def test_median_fta_agree_for_three_links():
    rng = np.random.default_rng(8)
    for _ in range(25):
        offs = rng.normal(size=3)
        assert fta_estimate(offs, 1) == median_estimate(offs)
