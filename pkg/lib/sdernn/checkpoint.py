# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Versioned JSON checkpoints for SDE-RNN and baseline models.

A checkpoint looks like

```json
{
  "format": "sdernn-checkpoint v1",
  "kind": "sde-rnn",
  "dims": {"hidden_size": 5, "input_size": 1, "output_size": 1},
  "options": {"initial_cov": 0.0, "drift_activations": ["tanh", "identity"], ...},
  "arrays": {"gru.W_iz": {"shape": [5, 1], "data": [...]}, ...},
  "extra": {"train": {...}, "normalization": {...}}
}
```

Arrays are stored row-major with shortest round-trip floats, so a saved model reloads
bit-identically and saving twice produces identical bytes.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from jsonschema import ValidationError as SchemaValidationError
from jsonschema import validate
from parse import parse  # type: ignore

from sdernn.baseline import ClassicGru
from sdernn.errors import CheckpointError, SdeRnnError
from sdernn.gru import GruParams
from sdernn.moments import AffineHead
from sdernn.neural_sde import MLP, SdeParams
from sdernn.sde_rnn import ModelParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FORMAT_TEMPLATE = "sdernn-checkpoint v{version:d}"
FORMAT = f"sdernn-checkpoint v{FORMAT_VERSION}"
KIND_SDE_RNN = "sde-rnn"
KIND_CLASSIC_GRU = "classic-gru"

CHECKPOINT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema",
    "type": "object",
    "required": ["format", "kind", "dims", "options", "arrays", "extra"],
    "properties": {
        "format": {"type": "string"},
        "kind": {"enum": [KIND_SDE_RNN, KIND_CLASSIC_GRU]},
        "dims": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 1},
        },
        "options": {"type": "object"},
        "arrays": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["shape", "data"],
                "properties": {
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "data": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "extra": {"type": "object"},
    },
}

Model = Union[ModelParams, ClassicGru]


@dataclass
class Checkpoint:
    """A loaded checkpoint."""

    model: Model
    kind: str
    extra: Dict[str, Any] = field(default_factory=dict)


def _encode(arrays: Dict[str, np.ndarray]) -> Dict[str, Any]:
    return {
        name: {"shape": list(np.shape(a)), "data": np.asarray(a, dtype=float).ravel().tolist()}
        for name, a in sorted(arrays.items())
    }


def _decode(arrays: Dict[str, Any]) -> Dict[str, np.ndarray]:
    out = {}
    for name, entry in arrays.items():
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"array {name}: {data.size} values do not fill shape {shape}")
        out[name] = data.reshape(shape)
    return out


def to_document(model: Model, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """The JSON document for `model`."""
    if isinstance(model, ModelParams):
        kind = KIND_SDE_RNN
        dims = {
            "hidden_size": model.hidden_size,
            "input_size": model.input_size,
            "output_size": model.output_size,
        }
        sde = model.sde
        options = {
            "initial_cov": model.initial_cov,
            "drift_activations": [
                sde.drift_net.hidden_activation,
                sde.drift_net.output_activation,
            ],
            "diffusion_activations": [
                sde.diffusion_net.hidden_activation,
                sde.diffusion_net.output_activation,
            ],
        }
        arrays = model.all_arrays()
    elif isinstance(model, ClassicGru):
        kind = KIND_CLASSIC_GRU
        dims = {
            "hidden_size": model.gru.hidden_size,
            "input_size": model.gru.input_size,
            "head_hidden": model.hidden_layer.output_size,
        }
        options = {"dropout_rate": model.dropout_rate, "dropout_seed": model.dropout_seed}
        arrays = model.flat()
    else:
        raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")
    return {
        "format": FORMAT,
        "kind": kind,
        "dims": dims,
        "options": options,
        "arrays": _encode(arrays),
        "extra": dict(extra or {}),
    }


def save_checkpoint(
    model: Model, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None
) -> None:
    """Write `model` and free-form `extra` metadata to `path`."""
    document = to_document(model, extra)
    Path(path).write_text(json.dumps(document, sort_keys=True) + "\n")
    logger.info("saved %s checkpoint to %s", document["kind"], path)


def _split(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}


def _build_sde_rnn(document: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> ModelParams:
    options = document["options"]
    drift_act = options.get("drift_activations", ["tanh", "identity"])
    diffusion_act = options.get("diffusion_activations", ["tanh", "sigmoid"])
    drift = _split(arrays, "sde.drift.")
    diffusion = _split(arrays, "sde.diffusion.")
    model = ModelParams(
        gru=GruParams.from_arrays(_split(arrays, "gru.")),
        sde=SdeParams(
            MLP(drift["W1"], drift["b1"], drift["W2"], drift["b2"], *drift_act),
            MLP(
                diffusion["W1"], diffusion["b1"], diffusion["W2"], diffusion["b2"], *diffusion_act
            ),
            arrays["sde.q_diag"],
        ),
        head=AffineHead(arrays["head.W"], arrays["head.b"]),
        initial_cov=float(options.get("initial_cov", 0.0)),
    )
    dims = document["dims"]
    actual = {
        "hidden_size": model.hidden_size,
        "input_size": model.input_size,
        "output_size": model.output_size,
    }
    for name, value in actual.items():
        if name in dims and dims[name] != value:
            raise CheckpointError(f"dims.{name}={dims[name]} but arrays give {value}")
    return model


def _build_classic_gru(document: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> ClassicGru:
    return ClassicGru(
        gru=GruParams.from_arrays(_split(arrays, "gru.")),
        hidden_layer=AffineHead(arrays["hidden.W"], arrays["hidden.b"]),
        output_layer=AffineHead(arrays["output.W"], arrays["output.b"]),
        dropout_rate=float(document["options"].get("dropout_rate", 0.3)),
        dropout_seed=int(document["options"].get("dropout_seed", 0)),
    )


def from_document(document: Dict[str, Any]) -> Checkpoint:
    """Validate a checkpoint document and rebuild its model."""
    try:
        validate(document, CHECKPOINT_SCHEMA)
    except SchemaValidationError as e:
        raise CheckpointError(f"invalid checkpoint: {e.message}") from e
    found = parse(FORMAT_TEMPLATE, document["format"])
    if found is None:
        raise CheckpointError(f"unrecognized checkpoint format {document['format']!r}")
    if found["version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {found['version']} (expected {FORMAT_VERSION})"
        )
    arrays = _decode(document["arrays"])
    try:
        if document["kind"] == KIND_SDE_RNN:
            model: Model = _build_sde_rnn(document, arrays)
        else:
            model = _build_classic_gru(document, arrays)
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing array {e.args[0]!r}") from e
    except (SdeRnnError, TypeError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"inconsistent checkpoint: {e}") from e
    return Checkpoint(model=model, kind=document["kind"], extra=document["extra"])


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`."""
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON: {e}") from e
    checkpoint = from_document(document)
    logger.info("loaded %s checkpoint from %s", checkpoint.kind, path)
    return checkpoint
