import numpy as np
import pytest

from ptpkit.errors import ConfigError, DataError
from ptpkit.exchange import (
    GroundTruth,
    ObservationSet,
    draw_attack_magnitudes,
    read_observations_csv,
    synthesize,
    write_observations_csv,
)


def test_all_zero_model():
    truth = GroundTruth(0.0, np.zeros(1), np.zeros(1), np.zeros(1, dtype=int))
    obs = synthesize(truth, np.zeros((1, 3)), np.zeros((1, 3)))
    assert np.all(obs.u == 0) and np.all(obs.v == 0)


def test_direct_substitution():
    # delta=1, d=2, attacked with tau=5, no noise: u = 2+1+5 = 8, v = 2-1 = 1
    with pytest.warns(UserWarning):
        truth = GroundTruth(1.0, np.array([2.0]), np.array([5.0]), np.array([1]))
    obs = synthesize(truth, np.zeros((1, 1)), np.zeros((1, 1)))
    assert obs.u[0, 0] == 8.0
    assert obs.v[0, 0] == 1.0


def test_reverse_path_attack_flag():
    with pytest.warns(UserWarning):
        truth = GroundTruth(1.0, np.array([2.0]), np.array([5.0]), np.array([1]))
    obs = synthesize(truth, np.zeros((1, 1)), np.zeros((1, 1)),
                     attack_reverse=True)
    assert obs.u[0, 0] == 3.0
    assert obs.v[0, 0] == 6.0


def test_offset_cancellation_identities():
    rng = np.random.default_rng(5)
    n, p = 5, 40
    eta = np.array([0, 0, 1, 0, 0])
    tau = np.array([0.0, 0.0, 3e-6, 0.0, 0.0])
    truth = GroundTruth(2e-6, rng.uniform(0, 1e-4, n), tau, eta)
    w1 = rng.exponential(1e-5, (n, p))
    w2 = rng.exponential(1e-5, (n, p))
    obs = synthesize(truth, w1, w2)
    clean = eta == 0
    # delta cancels in u+v on unattacked links
    lhs = obs.u[clean] + obs.v[clean]
    rhs = 2 * truth.d[clean][:, None] + w1[clean] + w2[clean]
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-18)
    # u - v - 2 delta - eta tau recovers the noise difference on all links
    lhs = obs.u - obs.v - 2 * truth.delta - (eta * tau)[:, None]
    assert np.allclose(lhs, w1 - w2, rtol=0, atol=1e-18)


def test_synthesis_deterministic():
    truth = GroundTruth(1e-6, np.array([2e-5]), np.array([0.0]), np.array([0]))
    w = np.full((1, 4), 3e-6)
    a = synthesize(truth, w, w)
    b = synthesize(truth, w, w)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_ground_truth_validation():
    with pytest.raises(ConfigError):
        GroundTruth(0.0, np.zeros(2), np.array([1e-6, 0.0]), np.zeros(2, dtype=int))
    with pytest.warns(UserWarning):
        # attacked majority: synthesis allowed, estimators assume otherwise
        GroundTruth(0.0, np.zeros(2), np.array([0.0, 1e-6]), np.array([1, 1]))
    with pytest.raises(ConfigError):
        GroundTruth(0.0, np.array([-1.0]), np.zeros(1), np.zeros(1, dtype=int))
    with pytest.raises(ConfigError):
        GroundTruth(0.0, np.zeros(3), np.zeros(3), np.array([0, 2, 0]))


def test_shape_mismatch_and_nonfinite():
    truth = GroundTruth(0.0, np.zeros(2), np.zeros(2), np.zeros(2, dtype=int))
    with pytest.raises(ConfigError):
        synthesize(truth, np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(DataError):
        ObservationSet(np.array([[np.inf]]), np.array([[0.0]]))


def test_attack_magnitudes_empty():
    assert draw_attack_magnitudes(0, seed=1).size == 0


def test_attack_magnitudes_support_and_symmetry():
    tau = draw_attack_magnitudes(100_000, seed=2)
    mags = np.abs(tau)
    assert np.all(mags >= 0.5e-6) and np.all(mags <= 2.0e-6)
    # no mass inside (-0.5, 0.5) us and a fair sign coin
    assert abs(np.mean(tau > 0) - 0.5) < 0.01
    # symmetric union: mean ~ 0 (se = 1.25us-ish / sqrt(n))
    assert abs(tau.mean()) < 3 * tau.std() / np.sqrt(tau.size)


def test_observations_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    obs = ObservationSet(rng.normal(5e-5, 1e-5, (3, 7)),
                         rng.normal(5e-5, 1e-5, (3, 7)))
    path = tmp_path / "obs.csv"
    write_observations_csv(obs, path)
    back = read_observations_csv(path)
    assert np.array_equal(back.u, obs.u)
    assert np.array_equal(back.v, obs.v)


def test_ground_truth_json_round_trip():
    truth = GroundTruth(
        1.5e-6, np.array([1e-5, 2e-5, 3e-5]),
        np.array([0.0, -1e-6, 0.0]), np.array([0, 1, 0]),
    )
    back = GroundTruth.from_json(truth.to_json())
    assert back.delta == truth.delta
    assert np.array_equal(back.d, truth.d)
    assert np.array_equal(back.tau, truth.tau)
    assert np.array_equal(back.eta, truth.eta)
