# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""SDE-RNN imputation with uncertainty.

The model walks a time grid. Between grid points the hidden-state moments follow the neural
SDE (`propagate_moments`); at grid points where the record is observed they are pushed through
the GRU together with the observation noise (`cvrnn_update`). Where the record is not observed
the propagated state is kept as is. Every grid point emits the output mean and covariance from
the head, after any update at that point.

```python
model = ModelParams.initialize(ModelConfig(hidden_size=5))
result = impute(model, record, dataset.union_grid, IntegrationConfig(time_scale=1 / 1440))
result.mean_series, result.variance_series
```
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdernn import numcore as nc
from sdernn.config import IntegrationConfig, ModelConfig
from sdernn.data import Record
from sdernn.errors import AlignmentError, ShapeError, ValidationError
from sdernn.gru import GruCell, GruParams
from sdernn.moments import (
    AffineHead,
    GaussianState,
    ObservationNoise,
    cvrnn_update,
    output_transform,
)
from sdernn.neural_sde import SdeParams, integrate_mean, propagate_moments
from sdernn.numcore import Array, Operand
from sdernn.training import MeanPath

logger = logging.getLogger(__name__)

ALIGNMENT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """GRU, SDE and head parameters of one SDE-RNN."""

    gru: GruParams
    sde: SdeParams
    head: AffineHead
    initial_cov: float = 0.0

    def __post_init__(self):
        m = self.gru.hidden_size
        if self.sde.hidden_size != m:
            raise ShapeError(f"sde hidden size {self.sde.hidden_size} != gru hidden size {m}")
        if self.head.input_size != m:
            raise ShapeError(f"head input size {self.head.input_size} != gru hidden size {m}")
        if self.initial_cov < 0:
            raise ValidationError("initial_cov must be >= 0")

    @property
    def hidden_size(self) -> int:
        """Hidden size m."""
        return self.gru.hidden_size

    @property
    def input_size(self) -> int:
        """Input size d."""
        return self.gru.input_size

    @property
    def output_size(self) -> int:
        """Output size."""
        return self.head.output_size

    @classmethod
    def initialize(cls, cfg: Optional[ModelConfig] = None) -> "ModelParams":
        """Seeded uniform initialization of every layer."""
        cfg = cfg or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        m = cfg.hidden_size
        return cls(
            gru=GruParams.initialize(m, cfg.input_size, rng),
            sde=SdeParams.initialize(m, cfg.drift_hidden, cfg.diffusion_hidden, cfg.q_diag, rng),
            head=AffineHead.initialize(cfg.output_size, m, rng),
            initial_cov=cfg.initial_cov,
        )

    def flat(self) -> Dict[str, Array]:
        """Trainable arrays: GRU, drift network and head.

        The diffusion network and Q only shape covariances and receive no gradient.
        """
        arrays = {f"gru.{k}": v for k, v in self.gru.arrays().items()}
        arrays.update({f"sde.drift.{k}": v for k, v in self.sde.drift_net.arrays().items()})
        arrays.update({"head.W": self.head.W, "head.b": self.head.b})
        return {k: nc.value_of(v) for k, v in arrays.items()}

    def all_arrays(self) -> Dict[str, Array]:
        """Every array, trainable or not, for checkpoints."""
        arrays = self.flat()
        diffusion = self.sde.diffusion_net.arrays()
        arrays.update({f"sde.diffusion.{k}": nc.value_of(v) for k, v in diffusion.items()})
        arrays["sde.q_diag"] = self.sde.q_diag
        return arrays

    def unflatten(self, arrays: Dict[str, Operand]) -> "ModelParams":
        """Copy with the named arrays replaced; names not given keep their value."""

        def pick(prefix: str, current: Dict[str, Operand]) -> Dict[str, Operand]:
            return {k: arrays.get(f"{prefix}{k}", v) for k, v in current.items()}

        gru = GruParams.from_arrays(pick("gru.", self.gru.arrays()))
        drift = self.sde.drift_net.with_arrays(pick("sde.drift.", self.sde.drift_net.arrays()))
        diffusion = self.sde.diffusion_net.with_arrays(
            pick("sde.diffusion.", self.sde.diffusion_net.arrays())
        )
        q_diag = nc.value_of(arrays.get("sde.q_diag", self.sde.q_diag))
        head = AffineHead(arrays.get("head.W", self.head.W), arrays.get("head.b", self.head.b))
        return replace(self, gru=gru, sde=SdeParams(drift, diffusion, q_diag), head=head)

    def mean_path(
        self,
        record: Record,
        integration: Optional[IntegrationConfig] = None,
        bptt_window: Optional[int] = None,
        grid=None,
        step: int = 0,
    ) -> MeanPath:
        """Mean-only replay of `record` over `grid`, tape-aware.

        The walk is the one `impute` takes: the hidden mean starts at zero on `grid[0]`, is
        integrated through the drift from one grid point to the next and updated by the GRU
        at every observed instant. The head output before each update (except the first) is
        the forecast; after it, the filtered output. `grid` defaults to the record's own
        instants. `step` is unused; the model has no stochastic regularization.
        """
        integration = integration or IntegrationConfig()
        grid = record.times if grid is None else validate_grid(grid)
        observed, values, _ = grid_observations(record, grid)
        cfg = integration.resolve(grid)
        cell = GruCell(self.gru)
        h: Operand = np.zeros(self.hidden_size)
        filtered: List[Operand] = []
        forecast: List[Operand] = []
        for i, t in enumerate(grid):
            if i > 0:
                h = integrate_mean(self.sde, h, grid[i - 1], t, cfg)
            if not observed[i]:
                continue
            if filtered:
                forecast.append(self.head.forward(h))
                if bptt_window and len(filtered) % bptt_window == 0:
                    h = nc.stop_gradient(h)
            h = cell.step(h, np.atleast_1d(values[i]))
            filtered.append(self.head.forward(h))
        targets = values[observed == 1].reshape(-1, 1)
        return MeanPath(filtered, targets, forecast, targets[1:])


def initial_state(model: ModelParams) -> GaussianState:
    """Zero mean and `model.initial_cov * I` covariance."""
    return GaussianState.zeros(model.hidden_size, model.initial_cov)


@dataclass(frozen=True, eq=False)
class ImputationResult:
    """Per-grid-point outputs of `impute`.

    Attributes:
        times: the grid.
        means: (T, output) output means.
        variances: (T, output, output) output covariances.
        observed_mask: (T,) 1 where the record was observed and assimilated.
        states: hidden-state moments after each grid point, when requested.
        prior_states: hidden-state moments before any update at each grid point, when
            requested.
    """

    times: Array
    means: Array
    variances: Array
    observed_mask: np.ndarray
    states: Optional[Sequence[GaussianState]] = None
    prior_states: Optional[Sequence[GaussianState]] = None

    def __len__(self) -> int:
        return self.times.size

    @property
    def mean_series(self) -> Array:
        """First output channel of the means."""
        return self.means[:, 0]

    @property
    def variance_series(self) -> Array:
        """First diagonal entry of the output covariances."""
        return self.variances[:, 0, 0]


def validate_grid(grid) -> Array:
    """Coerce `grid` to a finite, strictly increasing vector."""
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(grid)):
        raise ValidationError("grid must be finite")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing")
    return grid


def align_to_grid(record: Record, grid: Array) -> np.ndarray:
    """Grid index of every record instant."""
    if not grid.size:
        if len(record):
            raise AlignmentError(record.record_id, float(record.times[0]))
        return np.zeros(0, dtype=int)
    idx = np.clip(np.searchsorted(grid, record.times), 0, grid.size - 1)
    # nearest of the two neighbours
    left = np.clip(idx - 1, 0, grid.size - 1)
    closer_left = np.abs(grid[left] - record.times) < np.abs(grid[idx] - record.times)
    idx = np.where(closer_left, left, idx)
    off = np.abs(grid[idx] - record.times) > ALIGNMENT_TOLERANCE * np.maximum(
        1.0, np.abs(record.times)
    )
    if off.any():
        raise AlignmentError(record.record_id, float(record.times[np.argmax(off)]))
    return idx


def grid_observations(record: Record, grid: Array) -> Tuple[np.ndarray, Array, Array]:
    """Observed mask, values and noise std of `record` scattered onto `grid`.

    Grid points the record does not observe carry mask 0 and zeros.

    Raises:
        AlignmentError: a record instant is not on the grid.
    """
    positions = align_to_grid(record, grid)
    observed = np.zeros(grid.size, dtype=np.int8)
    values = np.zeros(grid.size)
    sigma = np.zeros(grid.size)
    hit = record.observed
    observed[positions[hit]] = 1
    values[positions[hit]] = record.values[hit]
    sigma[positions[hit]] = record.noise_sigma[hit]
    return observed, values, sigma


def impute(
    model: ModelParams,
    record: Record,
    grid,
    cfg: Optional[IntegrationConfig] = None,
    keep_states: bool = False,
) -> ImputationResult:
    """Impute `record` on `grid` with predicted uncertainty.

    Args:
        model: trained parameters.
        record: the record; its observed values are assimilated with noise variance
            `noise_sigma ** 2`.
        grid: strictly increasing target times containing every record instant.
        cfg: integration settings; `dt=None` uses a tenth of the finest grid gap.
        keep_states: also return the hidden-state moments at every grid point.

    Returns:
        Output means and covariances at every grid point.

    Raises:
        ValidationError: the grid is not strictly increasing.
        AlignmentError: a record instant is not on the grid.
    """
    grid = validate_grid(grid)
    if model.input_size != 1:
        raise ShapeError(f"records are scalar; model input size is {model.input_size}")
    observed, values, sigma = grid_observations(record, grid)
    cfg = (cfg or IntegrationConfig()).resolve(grid)

    out_dim = model.output_size
    means = np.zeros((grid.size, out_dim))
    variances = np.zeros((grid.size, out_dim, out_dim))
    states: List[GaussianState] = []
    priors: List[GaussianState] = []
    cell = GruCell(model.gru)

    state = initial_state(model)
    for i, t in enumerate(grid):
        if i > 0:
            state = propagate_moments(model.sde, state, grid[i - 1], t, cfg)
        if keep_states:
            priors.append(state)
        if observed[i]:
            noise = ObservationNoise.from_std(sigma[i])
            state = cvrnn_update(cell, state, np.atleast_1d(values[i]), noise)
        if keep_states:
            states.append(state)
        estimate = output_transform(model.head, state)
        means[i] = estimate.mean
        variances[i] = estimate.cov

    logger.debug(
        "imputed %s on %d grid points (%d observed)", record.record_id, grid.size, observed.sum()
    )
    return ImputationResult(
        times=grid,
        means=means,
        variances=variances,
        observed_mask=observed,
        states=states if keep_states else None,
        prior_states=priors if keep_states else None,
    )
