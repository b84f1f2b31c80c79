# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

import json

import numpy as np
import pytest

from sdernn.baseline import ClassicGru
from sdernn.checkpoint import (
    KIND_CLASSIC_GRU,
    KIND_SDE_RNN,
    from_document,
    load_checkpoint,
    save_checkpoint,
    to_document,
)
from sdernn.config import BaselineConfig, ModelConfig
from sdernn.errors import CheckpointError
from sdernn.sde_rnn import ModelParams


@pytest.fixture
def model():
    return ModelParams.initialize(
        ModelConfig(hidden_size=3, drift_hidden=6, diffusion_hidden=4, initial_cov=1e-3, seed=7)
    )


def test_sde_rnn_reloads_bit_identically(tmp_path, model):
    path = tmp_path / "model.json"
    save_checkpoint(model, path, {"normalization": {"a": {"min": 0.0, "max": 2.0}}})
    loaded = load_checkpoint(path)
    assert loaded.kind == KIND_SDE_RNN
    assert loaded.extra["normalization"]["a"]["max"] == 2.0
    assert loaded.model.initial_cov == model.initial_cov
    before, after = model.all_arrays(), loaded.model.all_arrays()
    assert before.keys() == after.keys()
    for name in before:
        assert before[name].tobytes() == after[name].tobytes(), name


def test_classic_gru_reloads_bit_identically(tmp_path):
    baseline = ClassicGru.initialize(BaselineConfig(hidden_size=4, head_hidden=8, seed=2))
    path = tmp_path / "baseline.json"
    save_checkpoint(baseline, path)
    loaded = load_checkpoint(path)
    assert loaded.kind == KIND_CLASSIC_GRU
    assert loaded.model.dropout_rate == baseline.dropout_rate
    assert loaded.model.dropout_seed == 2
    for name, value in baseline.flat().items():
        assert value.tobytes() == loaded.model.flat()[name].tobytes(), name


def test_saving_twice_gives_identical_bytes(tmp_path, model):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(model, first)
    save_checkpoint(load_checkpoint(first).model, second)
    assert first.read_bytes() == second.read_bytes()


def test_unsupported_version(model):
    document = to_document(model)
    document["format"] = "sdernn-checkpoint v2"
    with pytest.raises(CheckpointError, match="unsupported checkpoint version 2"):
        from_document(document)


def test_unrecognized_format(model):
    document = to_document(model)
    document["format"] = "something else"
    with pytest.raises(CheckpointError, match="unrecognized"):
        from_document(document)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("arrays"),
        lambda d: d.update(kind="transformer"),
        lambda d: d["arrays"]["head.b"].update(data=["x"]),
        lambda d: d["dims"].update(hidden_size=0),
    ],
)
def test_schema_violations(model, mutate):
    document = to_document(model)
    mutate(document)
    with pytest.raises(CheckpointError, match="invalid checkpoint"):
        from_document(document)


def test_missing_array(model):
    document = to_document(model)
    del document["arrays"]["gru.W_hz"]
    with pytest.raises(CheckpointError, match="missing array"):
        from_document(document)


def test_array_shape_mismatch(model):
    document = to_document(model)
    document["arrays"]["head.W"]["shape"] = [2, 2]
    with pytest.raises(CheckpointError, match="do not fill"):
        from_document(document)


def test_dims_must_match_arrays(model):
    document = to_document(model)
    document["dims"]["hidden_size"] = 4
    with pytest.raises(CheckpointError, match="dims.hidden_size"):
        from_document(document)


def test_inconsistent_arrays(model):
    document = to_document(model)
    document["arrays"]["head.W"] = {"shape": [1, 2], "data": [0.0, 0.0]}
    with pytest.raises(CheckpointError, match="inconsistent"):
        from_document(document)


def test_not_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{")
    with pytest.raises(CheckpointError, match="not valid JSON"):
        load_checkpoint(path)


def test_document_is_plain_json(model):
    document = to_document(model)
    assert json.loads(json.dumps(document)) == document
    assert np.asarray(document["arrays"]["sde.q_diag"]["data"]).size == 3
