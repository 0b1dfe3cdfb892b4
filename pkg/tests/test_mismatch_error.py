import itertools

import numpy as np
import pytest

from skfgraph.errors import CapacityError, PreconditionError
from skfgraph.kalman import riccati
from skfgraph.mismatch_error import enumerate_pairs, expected_mse, propagate_pair
from skfgraph.slds_core import DetectionModel, trajectory_prior

from conftest import random_stable_model, scalar_model
from oracles import scalar_mismatch_mc, scalar_riccati


def test_matched_pair_collapses_to_filter_covariance():
    model = random_stable_model(np.random.default_rng(1))
    traj = [0, 2, 1, 1, 0]
    for stats in propagate_pair(model, traj, traj):
        np.testing.assert_allclose(stats.error_mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(stats.error_second, stats.filter_cov, rtol=1e-9, atol=1e-12)


def test_equal_dynamics_give_zero_bias():
    model = scalar_model([0.8, 0.8], [0.01, 0.5], x0=3.0)
    for stats in propagate_pair(model, [0, 0, 1], [1, 1, 0]):
        assert abs(stats.error_mean[0]) < 1e-12
        assert stats.mse > 0


def test_scalar_moments_match_direct_simulation():
    model = scalar_model([1.0, 0.5], 0.01, R=0.04, P0=0.04, x0=1.0)
    stats = propagate_pair(model, [0, 0, 0], [1, 1, 1])
    mc = scalar_mismatch_mc([1.0, 0.5], [0.01, 0.01], 1.0, 0.04, 1.0, 0.04, [0, 0, 0], [1, 1, 1], 100_000, seed=3)
    for s, (mean, se_mean, second, se_second) in zip(stats, mc):
        assert abs(s.error_mean[0] - mean) <= 3 * se_mean
        assert abs(s.error_second[0, 0] - second) <= 3 * se_second


def test_single_mode_single_pair():
    model = scalar_model([0.9], 0.1)
    pairs = enumerate_pairs(model, DetectionModel(), horizon=4)
    assert len(pairs) == 1 and pairs[0].weight == 1.0


def test_perfect_detection_pairs():
    model = scalar_model([0.1, 0.4, 0.7, 0.9], 0.1)
    pairs = enumerate_pairs(model, DetectionModel(), horizon=1)
    assert len(pairs) == 4
    assert all(p.weight == 0.25 and p.true_suffix == p.used_suffix for p in pairs)


def test_confusion_pair_weights():
    model = scalar_model([0.2, 0.8], 0.1)
    det = DetectionModel("confusion", confusion=[[0.9, 0.1], [0.2, 0.8]])
    pairs = enumerate_pairs(model, det, horizon=1)
    got = {(p.true_suffix, p.used_suffix): p.weight for p in pairs}
    expected = {((0,), (0,)): 0.45, ((0,), (1,)): 0.05, ((1,), (0,)): 0.10, ((1,), (1,)): 0.40}
    assert got.keys() == expected.keys()
    for key, w in expected.items():
        assert got[key] == pytest.approx(w, abs=1e-15)


@pytest.mark.parametrize("horizon", [1, 2, 3, 4])
def test_weights_conserved(horizon):
    rng = np.random.default_rng(horizon)
    model = random_stable_model(rng, r=3, z=1, m=1)
    det = DetectionModel("confusion", confusion=rng.dirichlet(np.ones(3), size=3))
    assert sum(p.weight for p in enumerate_pairs(model, det, horizon)) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_joint_second_moment_stays_psd(seed):
    rng = np.random.default_rng(seed)
    model = random_stable_model(rng, r=2, z=2, m=1)
    det = DetectionModel("confusion", confusion=[[0.7, 0.3], [0.4, 0.6]])
    for p in enumerate_pairs(model, det, horizon=6, cap=10**6):
        M = p.joint_second
        assert np.linalg.eigvalsh(M).min() >= -1e-9 * np.trace(M)


def test_single_mode_mse_is_riccati_trace():
    model = scalar_model([0.9], 0.05, R=0.2, P0=0.3)
    report = expected_mse(model, DetectionModel(), horizon=5)
    np.testing.assert_allclose(report.per_step_mse, scalar_riccati(0.9, 0.05, 1.0, 0.2, 0.3, 5), rtol=1e-12)


def test_perfect_detection_mse_is_prior_weighted_matched_trace():
    model = random_stable_model(np.random.default_rng(5), r=2, z=2, m=2)
    report = expected_mse(model, DetectionModel(), horizon=3)
    expected = np.zeros(3)
    for traj in itertools.product(range(2), repeat=3):
        _, covs = riccati(model, traj)
        expected += trajectory_prior(model, traj) * np.trace(covs, axis1=1, axis2=2)
    np.testing.assert_allclose(report.per_step_mse, expected, rtol=1e-10)
    np.testing.assert_allclose(report.per_step_mean, 0.0, atol=1e-12)


def test_capacity_error_names_horizon():
    model = scalar_model([0.1, 0.5, 0.9], 0.1)
    with pytest.raises(CapacityError, match="horizon"):
        enumerate_pairs(model, DetectionModel(), horizon=8, cap=1000)


def test_detection_outside_used_modes_rejected():
    model = scalar_model([0.1, 0.5], 0.1)
    with pytest.raises(PreconditionError):
        enumerate_pairs(model, DetectionModel(), horizon=1, used_modes=[0])
