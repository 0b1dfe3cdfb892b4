import itertools

import numpy as np
import pytest
from scipy.optimize import brentq

from skfgraph.errors import ModelError, PreconditionError
from skfgraph.slds_core import (
    DetectionModel,
    ModeParams,
    SldsModel,
    build_diffusion_slds,
    first_step_snr_db,
    model_from_dict,
    model_to_dict,
    neumann_laplacian,
    simulate,
    simulate_batch,
    trajectory_prior,
    validate_model,
)

from conftest import scalar_model


def test_validate_flags_bad_priors():
    model = scalar_model([0.5, 0.9], 0.1, priors=[0.5, 0.6])
    assert any("priors sum ≠ 1" in msg for msg in validate_model(model))


def test_validate_flags_non_psd_q():
    bad = SldsModel((ModeParams(np.eye(2), np.diag([1.0, -0.1])),), np.eye(2), np.eye(2), [1.0], [[1.0]], np.zeros(2), np.eye(2))
    assert any("Q not PSD" in msg for msg in validate_model(bad))


def test_validate_flags_transition_row():
    model = scalar_model([0.5, 0.9], 0.1, transitions=[[0.5, 0.5], [0.3, 0.3]])
    assert validate_model(model) == ["transitions[1]: row sum ≠ 1 (sum = 0.6)"]


def test_diffusion_model_is_valid():
    assert validate_model(build_diffusion_slds()) == []


def test_noiseless_identity_dynamics():
    model = SldsModel(((1.0, 0.0),), [[1.0]], [[0.0]], [1.0], [[1.0]], [3.0], [[0.0]])
    run = simulate(model, 5, seed=1)
    assert np.all(run.states == 3.0)
    assert np.all(run.measurements == 3.0)


def test_geometric_decay():
    model = SldsModel(((0.5, 0.0),), [[1.0]], [[0.0]], [1.0], [[1.0]], [4.0], [[0.0]])
    np.testing.assert_allclose(simulate(model, 3, seed=0).states[:, 0], [2.0, 1.0, 0.5])


def test_measurement_noise_covariance_matches_r():
    # moment oracle: per-entry stderr of a sample covariance of unit Gaussians
    model = SldsModel(((0.5 * np.eye(2), np.eye(2)),), np.eye(2), np.eye(2), [1.0], [[1.0]], np.zeros(2), np.eye(2))
    run = simulate(model, 1000, seed=7)
    omega = run.measurements - run.states @ model.H.T
    S = np.cov(omega.T)
    T = len(omega)
    se = np.sqrt((1 + np.eye(2)) / T)  # var of S_ij is (1 + delta_ij) / T for R = I
    assert np.all(np.abs(S - np.eye(2)) < 3 * se)


def test_simulation_is_deterministic():
    model = build_diffusion_slds(z=8)
    a = simulate_batch(model, 6, 4, seed=11)
    b = simulate_batch(model, 6, 4, seed=11)
    c = simulate_batch(model, 6, 4, seed=12)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.modes, b.modes)
    assert not np.array_equal(a.states, c.states)


def test_substreams_are_component_independent():
    # fixing the modes must not change the noise draws
    model = scalar_model([0.5, 0.9], 0.1)
    sampled = simulate_batch(model, 4, 3, seed=5)
    forced = simulate_batch(model, 4, 3, seed=5, modes=sampled.modes)
    assert np.array_equal(sampled.states, forced.states)


def test_trajectory_prior_examples():
    uniform = scalar_model([0.1, 0.2, 0.3, 0.4], 0.1)
    assert trajectory_prior(uniform, [1]) == pytest.approx(0.25)
    assert trajectory_prior(uniform, [0, 2]) == pytest.approx(0.0625)
    chain = scalar_model([0.1, 0.2], 0.1, priors=[0.7, 0.3], transitions=[[0.9, 0.1], [0.2, 0.8]])
    assert trajectory_prior(chain, [0, 0, 1]) == pytest.approx(0.063)
    with pytest.raises(PreconditionError):
        trajectory_prior(chain, [])


@pytest.mark.parametrize("r,T", [(r, T) for r in range(1, 5) for T in range(1, 5)])
def test_trajectory_prior_normalizes(r, T):
    rng = np.random.default_rng(r * 10 + T)
    model = scalar_model(np.linspace(0.1, 0.9, r), 0.1, priors=rng.dirichlet(np.ones(r)),
                         transitions=rng.dirichlet(np.ones(r), size=r))
    total = sum(trajectory_prior(model, traj) for traj in itertools.product(range(r), repeat=T))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_diffusion_defaults():
    model = build_diffusion_slds()
    assert (model.r, model.z, model.m) == (4, 60, 60)
    for mode in model.modes:
        np.testing.assert_array_equal(mode.Q, 0.0004 * np.eye(60))
        np.testing.assert_allclose(mode.A.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(model.R, 0.04 * np.eye(60))


def test_laplacian_conserves_constants():
    assert np.all(neumann_laplacian(7).sum(axis=1) == 0)


def test_zero_diffusivity_is_identity():
    model = build_diffusion_slds(z=10, diffusivities=(0.0, 1.0))
    assert np.array_equal(model.modes[0].A, np.eye(10))


def test_unstable_scheme_rejected():
    with pytest.raises(PreconditionError):
        build_diffusion_slds(alpha=0.6)


def test_snr_calibration_matches_root_finder():
    # independent oracle: root-find the amplitude directly on the SNR definition
    def snr_gap(a):
        return first_step_snr_db(build_diffusion_slds(step_amplitude=a)) - 6.6

    expected = brentq(snr_gap, 0.01, 5.0, xtol=1e-14)
    model = build_diffusion_slds()
    assert model.x0_mean[0] == pytest.approx(expected, rel=1e-9)
    assert model.x0_mean[0] == pytest.approx(0.605, abs=5e-4)
    assert first_step_snr_db(model) == pytest.approx(6.6, abs=0.05)


def test_model_dict_round_trip():
    model = build_diffusion_slds(z=6)
    again = model_from_dict(model_to_dict(model))
    for a, b in zip(model.modes, again.modes):
        assert np.array_equal(a.A, b.A)
    assert np.array_equal(model.P0, again.P0)


def test_detection_matrices():
    assert np.array_equal(DetectionModel().matrix(3), np.eye(3))
    C = DetectionModel("oracle-cluster", mapping=(0, 0, 2)).matrix(3)
    assert C.tolist() == [[1, 0, 0], [1, 0, 0], [0, 0, 1]]
    with pytest.raises(PreconditionError):
        DetectionModel("confusion", confusion=[[0.5, 0.4], [0, 1]])


def test_factorization_failure_is_model_error():
    bad = scalar_model([0.5], -1.0)
    with pytest.raises(ModelError):
        simulate(bad, 2, seed=0)
