# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

from dataclasses import replace

import numpy as np
import pytest

from sdernn.baseline import N_FEATURES, ClassicGru, features, mc_predict
from sdernn.config import BaselineConfig, TrainConfig
from sdernn.data import MeasurementType, Record
from sdernn.errors import AlignmentError, ShapeError
from sdernn.gru import GruParams
from sdernn.moments import AffineHead
from sdernn.training import train


@pytest.fixture
def record():
    times = np.arange(0.0, 60.0, 5.0)
    mask = (np.arange(times.size) % 3 != 1).astype(int)
    values = np.where(mask == 1, 0.5 + 0.4 * np.sin(times / 10.0), np.nan)
    return Record("r", MeasurementType.P, values, times, mask, np.zeros(times.size))


def small(dropout_rate=0.3, seed=0) -> ClassicGru:
    return ClassicGru.initialize(
        BaselineConfig(hidden_size=4, head_hidden=16, dropout_rate=dropout_rate, seed=seed)
    )


def test_features():
    np.testing.assert_array_equal(features(0.7, 2.0, True), [0.7, 2.0, 1.0])
    np.testing.assert_array_equal(features(np.nan, 2.0, False), [0.0, 2.0, 0.0])


def test_rejects_wrong_feature_count():
    with pytest.raises(ShapeError, match=f"{N_FEATURES} features"):
        ClassicGru(
            GruParams.zeros(4, 2),
            AffineHead(np.zeros((8, 4)), np.zeros(8)),
            AffineHead(np.zeros((1, 8)), np.zeros(1)),
        )


def test_rejects_mismatched_head():
    with pytest.raises(ShapeError, match="output layer"):
        ClassicGru(
            GruParams.zeros(4, N_FEATURES),
            AffineHead(np.zeros((8, 4)), np.zeros(8)),
            AffineHead(np.zeros((1, 6)), np.zeros(1)),
        )


def test_vanishing_dropout_gives_vanishing_variance(record):
    result = mc_predict(small(dropout_rate=1e-12), record, record.times, mc_samples=20)
    assert np.max(result.variance_series) < 1e-20


def test_dropout_gives_spread(record):
    result = mc_predict(small(), record, record.times, mc_samples=50)
    assert np.all(result.variance_series > 0)


def test_single_sample_has_zero_variance(record):
    result = mc_predict(small(), record, record.times, mc_samples=1)
    np.testing.assert_array_equal(result.variance_series, np.zeros(len(record)))


def test_mc_predict_is_seeded(record):
    model = small()
    a = mc_predict(model, record, record.times, mc_samples=30, seed=4)
    b = mc_predict(model, record, record.times, mc_samples=30, seed=4)
    c = mc_predict(model, record, record.times, mc_samples=30, seed=5)
    assert a.means.tobytes() == b.means.tobytes()
    assert a.variances.tobytes() == b.variances.tobytes()
    assert not np.array_equal(a.means, c.means)


def test_mc_predict_mask_and_grid(record):
    grid = np.arange(0.0, 60.0, 1.0)
    result = mc_predict(small(), record, grid, mc_samples=5)
    assert len(result) == grid.size
    assert int(result.observed_mask.sum()) == int(record.mask.sum())
    with pytest.raises(AlignmentError):
        mc_predict(small(), record, np.arange(0.0, 60.0, 2.0), mc_samples=5)


def test_mean_path_without_tape_is_deterministic(record):
    model = small()
    first = model.mean_path(record)
    second = model.mean_path(record)
    assert len(first.filtered) == int(record.mask.sum())
    assert len(first.forecast) == len(first.filtered) - 1
    for a, b in zip(first.filtered, second.filtered):
        np.testing.assert_array_equal(a, b)


def test_training_and_prediction_see_the_same_sequence(record):
    model = replace(small(seed=4), dropout_rate=0.0)
    grid = np.arange(0.0, 60.0)
    path = model.mean_path(record, grid=grid)
    result = mc_predict(model, record, grid, mc_samples=2)
    hit = result.observed_mask == 1
    assert hit.sum() == len(path.filtered)
    np.testing.assert_allclose(
        np.stack(path.filtered)[:, 0], result.mean_series[hit], rtol=0, atol=1e-12
    )


def test_dropout_masks_follow_seed_and_step():
    model = small(seed=3)
    first = model.dropout_rng("r", 0).random(8)
    np.testing.assert_array_equal(model.dropout_rng("r", 0).random(8), first)
    assert not np.array_equal(model.dropout_rng("r", 1).random(8), first)
    assert not np.array_equal(model.dropout_rng("other", 0).random(8), first)


def test_retraining_the_same_model_repeats_itself(record):
    model = small(seed=5)
    cfg = TrainConfig(epochs=3)
    first, report_first = train(model, [record], cfg)
    second, report_second = train(model, [record], cfg)
    assert report_first == report_second
    for name, value in first.flat().items():
        assert value.tobytes() == second.flat()[name].tobytes()


def test_flat_and_unflatten():
    model = small()
    flat = model.flat()
    assert {"hidden.W", "hidden.b", "output.W", "output.b", "gru.W_iz"} <= set(flat)
    rebuilt = model.unflatten({"output.b": flat["output.b"] + 1.0})
    np.testing.assert_array_equal(rebuilt.output_layer.b, flat["output.b"] + 1.0)
    np.testing.assert_array_equal(rebuilt.hidden_layer.W, flat["hidden.W"])


def test_training_is_seeded_and_reduces_loss(record):
    cfg = TrainConfig(learning_rate=0.02, epochs=30)
    model_a, report_a = train(small(seed=1), [record], cfg)
    model_b, report_b = train(small(seed=1), [record], cfg)
    assert report_a == report_b
    assert report_a.mse[-1] < report_a.mse[0]
    for name, value in model_a.flat().items():
        assert value.tobytes() == model_b.flat()[name].tobytes()
