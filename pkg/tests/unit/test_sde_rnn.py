# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

import numpy as np
import pytest

from sdernn import numcore as nc
from sdernn.config import IntegrationConfig, ModelConfig
from sdernn.data import MeasurementType, Record
from sdernn.errors import AlignmentError, ShapeError, ValidationError
from sdernn.gru import GruParams
from sdernn.moments import AffineHead, GaussianState, output_transform
from sdernn.neural_sde import MLP, SdeParams, propagate_moments
from sdernn.sde_rnn import ModelParams, align_to_grid, impute, initial_state


def make_record(times, values, mask=None, sigma=None, record_id="r0") -> Record:
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    return Record(
        record_id,
        MeasurementType.P,
        values,
        times,
        np.ones(times.size) if mask is None else mask,
        np.zeros(times.size) if sigma is None else sigma,
    )


def stub_model(m=3, drift=0.0, g=0.0, q=1.0, head=None, gru=None, initial_cov=0.0):
    return ModelParams(
        gru=gru if gru is not None else GruParams.initialize(m, 1, np.random.default_rng(0)),
        sde=SdeParams(
            MLP.linear(np.eye(m) * drift), MLP.constant(np.full(m, g), m), np.full(m, q)
        ),
        head=head if head is not None else AffineHead(np.ones((1, m)) / m, np.zeros(1)),
        initial_cov=initial_cov,
    )


def test_initial_state_default():
    state = initial_state(ModelParams.initialize(ModelConfig()))
    np.testing.assert_array_equal(state.mean, np.zeros(5))
    np.testing.assert_array_equal(state.cov, np.zeros((5, 5)))


def test_initial_state_epsilon():
    state = initial_state(ModelParams.initialize(ModelConfig(hidden_size=3, initial_cov=1e-4)))
    np.testing.assert_array_equal(state.cov, 1e-4 * np.eye(3))


def test_params_reject_mismatched_sizes():
    with pytest.raises(ShapeError, match="head input size"):
        stub_model(m=3, head=AffineHead(np.ones((1, 4)), np.zeros(1)))


def test_unobserved_record_is_pure_rollout():
    model = stub_model(drift=-0.5, g=0.3, initial_cov=0.1)
    grid = np.array([0.0, 0.5, 1.5, 3.0])
    record = make_record(grid, np.full(4, np.nan), mask=np.zeros(4))
    cfg = IntegrationConfig(dt=0.01)
    result = impute(model, record, grid, cfg, keep_states=True)

    state = initial_state(model)
    for i in range(1, grid.size):
        state = propagate_moments(model.sde, state, grid[i - 1], grid[i], cfg)
        expected = output_transform(model.head, state)
        np.testing.assert_array_equal(result.variances[i], expected.cov)
        np.testing.assert_array_equal(result.means[i], expected.mean)
    np.testing.assert_array_equal(result.observed_mask, np.zeros(4))


def test_noiseless_fully_observed_has_no_uncertainty():
    model = stub_model(g=0.0, q=0.0)
    grid = np.arange(6.0)
    result = impute(model, make_record(grid, np.linspace(0, 1, 6)), grid, IntegrationConfig())
    np.testing.assert_array_equal(result.variances, np.zeros((6, 1, 1)))


def test_brownian_variance_grows_linearly():
    w = np.array([[0.5, -1.0, 2.0]])
    model = stub_model(g=1.0, q=1.0, head=AffineHead(w, np.zeros(1)))
    grid = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    record = make_record(grid, [0.3, 0, 0, 0, 0], mask=np.array([1, 0, 0, 0, 0]))
    result = impute(model, record, grid, IntegrationConfig(dt=0.05))
    np.testing.assert_allclose(result.variance_series, grid * float(w @ w.T), atol=1e-10)


def test_observation_variance_is_nonzero_with_input_noise():
    model = ModelParams.initialize(ModelConfig(hidden_size=5))
    grid = np.array([0.0, 15.0, 30.0])
    record = make_record(grid, [0.4, 0.5, 0.6], sigma=np.full(3, 0.05))
    result = impute(model, record, grid, IntegrationConfig(time_scale=1 / 1440))
    assert result.variance_series[0] > 0
    assert np.all(result.observed_mask == 1)


def test_masked_selection_is_exact():
    model = stub_model(drift=-0.2, g=0.5, initial_cov=0.01)
    grid = np.array([0.0, 1.0, 2.0, 3.0])
    record = make_record(
        grid, [0.1, 0.2, 0.3, 0.4], mask=np.array([1, 0, 1, 0]), sigma=np.full(4, 0.1)
    )
    result = impute(model, record, grid, IntegrationConfig(dt=0.1), keep_states=True)
    for i in (1, 3):
        np.testing.assert_array_equal(result.states[i].mean, result.prior_states[i].mean)
        np.testing.assert_array_equal(result.states[i].cov, result.prior_states[i].cov)
    for i in (0, 2):
        assert not np.array_equal(result.states[i].cov, result.prior_states[i].cov)


def test_epistemic_growth_and_update_shrinkage():
    model = stub_model(g=0.4, gru=GruParams.zeros(3, 1))
    grid = np.arange(0.0, 20.0)
    mask = (np.arange(20) % 5 == 0).astype(int)
    values = np.where(mask == 1, 0.5, np.nan)
    record = make_record(grid, values, mask=mask, sigma=np.where(mask == 1, 1e-3, 0.0))
    result = impute(model, record, grid, IntegrationConfig(dt=0.1), keep_states=True)

    traces = [np.trace(s.cov) for s in result.states]
    priors = [np.trace(s.cov) for s in result.prior_states]
    for i in range(1, grid.size):
        assert priors[i] > traces[i - 1]
    for i in np.flatnonzero(mask)[1:]:
        assert traces[i] <= priors[i]


def test_covariances_are_psd_and_symmetric():
    model = ModelParams.initialize(ModelConfig(hidden_size=5, seed=3))
    grid = np.arange(0.0, 120.0)
    mask = (np.arange(120) % 15 == 0).astype(int)
    values = np.where(mask == 1, np.sin(grid / 20.0) * 0.5 + 0.5, np.nan)
    sigma = np.where(mask == 1, 0.05, 0.0)
    record = make_record(grid, values, mask=mask, sigma=sigma)
    cfg = IntegrationConfig(time_scale=1 / 1440)
    result = impute(model, record, grid, cfg, keep_states=True)
    for state in result.states:
        assert nc.min_eigenvalue(state.cov) >= -1e-9
        assert np.max(np.abs(state.cov - state.cov.T)) <= 1e-10
    assert np.all(result.variance_series >= 0)


def test_refining_dt_barely_moves_means():
    model = ModelParams.initialize(ModelConfig(hidden_size=5, seed=1))
    grid = np.arange(0.0, 60.0, 1.0)
    mask = (np.arange(60) % 15 == 0).astype(int)
    record = make_record(grid, np.where(mask == 1, 0.6, np.nan), mask=mask)
    coarse = impute(model, record, grid, IntegrationConfig(dt=0.2, time_scale=1 / 1440))
    fine = impute(model, record, grid, IntegrationConfig(dt=0.1, time_scale=1 / 1440))
    assert np.max(np.abs(coarse.mean_series - fine.mean_series)) < 1e-3


def test_impute_is_deterministic():
    model = ModelParams.initialize(ModelConfig(hidden_size=4, seed=2))
    grid = np.arange(0.0, 30.0)
    record = make_record(grid[::3], np.linspace(0.1, 0.9, 10))
    a = impute(model, record, grid)
    b = impute(model, record, grid)
    assert a.means.tobytes() == b.means.tobytes()
    assert a.variances.tobytes() == b.variances.tobytes()


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_mean_path_replays_the_imputation_walk(method):
    model = ModelParams.initialize(
        ModelConfig(hidden_size=4, drift_hidden=8, diffusion_hidden=8, seed=3)
    )
    grid = np.arange(0.0, 40.0)
    record = make_record(
        [3.0, 7.0, 15.0, 16.0, 30.0], [0.2, 0.6, 0.4, 0.5, 0.9], sigma=np.full(5, 0.05)
    )
    cfg = IntegrationConfig(method=method, time_scale=1 / 60)
    result = impute(model, record, grid, cfg, keep_states=True)
    path = model.mean_path(record, cfg, grid=grid)

    hit = result.observed_mask == 1
    np.testing.assert_allclose(
        np.stack(path.filtered)[:, 0], result.mean_series[hit], rtol=0, atol=1e-10
    )
    priors = [
        output_transform(model.head, state).mean
        for state, seen in zip(result.prior_states, hit)
        if seen
    ]
    np.testing.assert_allclose(np.stack(path.forecast), np.stack(priors[1:]), rtol=0, atol=1e-10)


def test_mean_path_defaults_to_record_instants():
    model = ModelParams.initialize(ModelConfig(hidden_size=3, drift_hidden=8, seed=4))
    record = make_record(
        [0.0, 5.0, 10.0, 20.0], [0.3, np.nan, 0.7, 0.1], mask=np.array([1, 0, 1, 1])
    )
    cfg = IntegrationConfig(time_scale=1 / 60)
    default = model.mean_path(record, cfg)
    explicit = model.mean_path(record, cfg, grid=record.times)
    for a, b in zip(default.filtered, explicit.filtered):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(default.targets[:, 0], [0.3, 0.7, 0.1])


def test_unsorted_grid_is_rejected():
    model = stub_model()
    with pytest.raises(ValidationError, match="strictly increasing"):
        impute(model, make_record([0.0], [0.1]), np.array([0.0, 2.0, 1.0]))


def test_off_grid_observation_is_rejected():
    model = stub_model()
    with pytest.raises(AlignmentError):
        impute(model, make_record([0.0, 1.5], [0.1, 0.2]), np.array([0.0, 1.0, 2.0]))


def test_align_to_grid_tolerates_rounding():
    record = make_record([0.0, 15.000000000001], [0.1, 0.2])
    np.testing.assert_array_equal(align_to_grid(record, np.arange(0.0, 31.0)), [0, 15])


def test_result_series_views():
    model = stub_model()
    grid = np.arange(4.0)
    result = impute(model, make_record(grid, [0.1, 0.2, 0.3, 0.4]), grid)
    assert len(result) == 4
    np.testing.assert_array_equal(result.mean_series, result.means[:, 0])
    np.testing.assert_array_equal(result.variance_series, result.variances[:, 0, 0])


def test_flat_and_unflatten_round_trip():
    model = ModelParams.initialize(ModelConfig(hidden_size=3, drift_hidden=4, diffusion_hidden=4))
    flat = model.flat()
    assert not any(name.startswith("sde.diffusion") for name in flat)
    rebuilt = model.unflatten({name: value + 1.0 for name, value in flat.items()})
    np.testing.assert_array_equal(rebuilt.head.W, model.head.W + 1.0)
    np.testing.assert_array_equal(rebuilt.sde.diffusion_net.W1, model.sde.diffusion_net.W1)


def test_gaussian_state_zero_helper():
    assert GaussianState.zeros(2, 0.5).cov.tolist() == [[0.5, 0.0], [0.0, 0.5]]
