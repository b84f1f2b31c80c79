# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Classic GRU with an MC-dropout head.

The baseline sees the grid as a plain sequence: at every instant its GRU consumes
`(value * mask, time, mask)` and a two-layer head `Linear -> tanh -> dropout -> Linear` reads
the hidden state. Uncertainty comes from keeping dropout active at inference and taking the
sample mean and variance over `mc_samples` passes.
"""

import logging
import zlib
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from sdernn import numcore as nc
from sdernn.config import BaselineConfig, IntegrationConfig
from sdernn.data import Record
from sdernn.errors import ShapeError
from sdernn.gru import GruCell, GruParams
from sdernn.moments import AffineHead
from sdernn.numcore import Array, Operand
from sdernn.sde_rnn import ImputationResult, grid_observations, validate_grid
from sdernn.training import MeanPath

logger = logging.getLogger(__name__)

N_FEATURES = 3


def features(value: float, time: float, observed: bool) -> Array:
    """GRU input at one instant."""
    return np.array([value if observed else 0.0, time, 1.0 if observed else 0.0])


@dataclass(frozen=True, eq=False)
class ClassicGru:
    """Baseline parameters and dropout settings.

    Dropout is applied during `mean_path` only while the parameters are on a tape, so plain
    evaluation is deterministic. Training masks are drawn from `dropout_seed`, the optimizer
    step and the record id, so a model trains the same way every time it is trained.
    """

    gru: GruParams
    hidden_layer: AffineHead
    output_layer: AffineHead
    dropout_rate: float = 0.3
    dropout_seed: int = 0

    def __post_init__(self):
        if self.gru.input_size != N_FEATURES:
            raise ShapeError(
                f"baseline GRU takes {N_FEATURES} features, got {self.gru.input_size}"
            )
        if self.hidden_layer.input_size != self.gru.hidden_size:
            raise ShapeError("hidden layer does not match the GRU hidden size")
        if self.output_layer.input_size != self.hidden_layer.output_size:
            raise ShapeError("output layer does not match the hidden layer")

    @classmethod
    def initialize(cls, cfg: Optional[BaselineConfig] = None) -> "ClassicGru":
        """Seeded uniform initialization."""
        cfg = cfg or BaselineConfig()
        rng = np.random.default_rng(cfg.seed)
        return cls(
            gru=GruParams.initialize(cfg.hidden_size, N_FEATURES, rng),
            hidden_layer=AffineHead.initialize(cfg.head_hidden, cfg.hidden_size, rng),
            output_layer=AffineHead.initialize(1, cfg.head_hidden, rng),
            dropout_rate=cfg.dropout_rate,
            dropout_seed=cfg.seed,
        )

    def flat(self) -> Dict[str, Array]:
        """Every array is trainable."""
        arrays = {f"gru.{k}": v for k, v in self.gru.arrays().items()}
        arrays.update({"hidden.W": self.hidden_layer.W, "hidden.b": self.hidden_layer.b})
        arrays.update({"output.W": self.output_layer.W, "output.b": self.output_layer.b})
        return {k: nc.value_of(v) for k, v in arrays.items()}

    def unflatten(self, arrays: Dict[str, Operand]) -> "ClassicGru":
        """Copy with the named arrays replaced."""
        gru = GruParams.from_arrays(
            {k: arrays.get(f"gru.{k}", v) for k, v in self.gru.arrays().items()}
        )
        hidden = AffineHead(
            arrays.get("hidden.W", self.hidden_layer.W),
            arrays.get("hidden.b", self.hidden_layer.b),
        )
        output = AffineHead(
            arrays.get("output.W", self.output_layer.W),
            arrays.get("output.b", self.output_layer.b),
        )
        return replace(self, gru=gru, hidden_layer=hidden, output_layer=output)

    def dropout_rng(self, record_id: str, step: int) -> np.random.Generator:
        """Mask stream for one record at one optimizer step."""
        return np.random.default_rng([self.dropout_seed, step, zlib.crc32(record_id.encode())])

    def _head(self, h: Operand, rng: Optional[np.random.Generator] = None) -> Operand:
        hidden = nc.tanh(self.hidden_layer.forward(h))
        if rng is not None:
            keep = rng.random(nc.value_of(hidden).shape) >= self.dropout_rate
            hidden = nc.hadamard(hidden, keep / (1.0 - self.dropout_rate))
        return self.output_layer.forward(hidden)

    def _inputs(self, record: Record, grid: Array, time_scale: float):
        observed, values, _ = grid_observations(record, grid)
        inputs = [
            features(x, t * time_scale, bool(seen)) for t, x, seen in zip(grid, values, observed)
        ]
        return inputs, observed, values

    def mean_path(
        self,
        record: Record,
        integration: Optional[IntegrationConfig] = None,
        bptt_window: Optional[int] = None,
        grid=None,
        step: int = 0,
    ) -> MeanPath:
        """Run over every instant of `grid`; predictions are read at observed instants.

        The GRU consumes exactly the inputs `mc_predict` feeds it on the same grid. `grid`
        defaults to the record's own instants. The forecast for an observation is the head
        output before that observation was consumed.
        """
        integration = integration or IntegrationConfig()
        grid = record.times if grid is None else validate_grid(grid)
        inputs, observed, values = self._inputs(record, grid, integration.time_scale)
        rng = None
        if isinstance(self.output_layer.W, nc.Var):
            rng = self.dropout_rng(record.record_id, step)
        cell = GruCell(self.gru)
        h: Operand = np.zeros(self.gru.hidden_size)
        filtered: List[Operand] = []
        forecast: List[Operand] = []
        for x, seen in zip(inputs, observed):
            if seen and filtered:
                forecast.append(self._head(h, rng))
                if bptt_window and len(filtered) % bptt_window == 0:
                    h = nc.stop_gradient(h)
            h = cell.step(h, x)
            if seen:
                filtered.append(self._head(h, rng))
        targets = values[observed == 1].reshape(-1, 1)
        return MeanPath(filtered, targets, forecast, targets[1:])

    def hidden_sequence(self, record: Record, grid: Array, time_scale: float = 1.0) -> Array:
        """Deterministic hidden states over `grid`, (T, m)."""
        inputs, _, _ = self._inputs(record, grid, time_scale)
        cell = GruCell(self.gru)
        h = np.zeros(self.gru.hidden_size)
        out = np.zeros((grid.size, self.gru.hidden_size))
        for i, x in enumerate(inputs):
            h = nc.value_of(cell.step(h, x))
            out[i] = h
        return out


def mc_predict(
    model: ClassicGru,
    record: Record,
    grid,
    mc_samples: int = 100,
    seed: int = 0,
    integration: Optional[IntegrationConfig] = None,
) -> ImputationResult:
    """MC-dropout prediction on `grid`.

    The hidden sequence is deterministic and computed once; each sample draws its own dropout
    masks from a stream spawned from `seed`, and samples are reduced in index order. The
    variance is the unbiased sample variance (zero for a single sample).
    """
    grid = validate_grid(grid)
    integration = integration or IntegrationConfig()
    hidden = model.hidden_sequence(record, grid, integration.time_scale)
    w1, b1 = nc.value_of(model.hidden_layer.W), nc.value_of(model.hidden_layer.b)
    w2, b2 = nc.value_of(model.output_layer.W), nc.value_of(model.output_layer.b)
    activations = np.tanh(hidden @ w1.T + b1)

    keep_scale = 1.0 / (1.0 - model.dropout_rate)
    samples = np.zeros((mc_samples, grid.size))
    for s, stream in enumerate(np.random.SeedSequence(seed).spawn(mc_samples)):
        rng = np.random.default_rng(stream)
        keep = rng.random(activations.shape) >= model.dropout_rate
        samples[s] = ((activations * keep * keep_scale) @ w2.T + b2)[:, 0]

    means = samples.mean(axis=0)
    variances = samples.var(axis=0, ddof=1) if mc_samples > 1 else np.zeros(grid.size)
    observed, _, _ = grid_observations(record, grid)
    logger.debug("mc-dropout over %d samples for %s", mc_samples, record.record_id)
    return ImputationResult(
        times=grid,
        means=means.reshape(-1, 1),
        variances=variances.reshape(-1, 1, 1),
        observed_mask=observed,
    )
