# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Mini-batch training on the mean path.

Any model exposing the `MeanPathModel` protocol can be trained here: its trainable arrays are
lifted onto a fresh `Tape` per record, the mean path is replayed on the tape, and the
gradients of the masked MSE are averaged over the mini-batch in record order before an Adam or
SGD step. Covariances never enter the loss.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, TypeVar

import numpy as np

from sdernn import numcore as nc
from sdernn.config import IntegrationConfig, TrainConfig
from sdernn.data import Record
from sdernn.errors import DivergenceError, ShapeError, UndefinedLossError, ValidationError
from sdernn.numcore import Array, Operand

logger = logging.getLogger(__name__)

_M = TypeVar("_M", bound="MeanPathModel")


@dataclass
class MeanPath:
    """Predictions of one record along the mean path.

    `filtered` holds the output after each observation was assimilated and `forecast` the
    output just before it (empty when the model has none).
    """

    filtered: List[Operand]
    targets: Array
    forecast: List[Operand] = field(default_factory=list)
    forecast_targets: Array = field(default_factory=lambda: np.zeros((0, 1)))


class MeanPathModel(Protocol):
    """What `train` needs from a model."""

    def flat(self) -> Dict[str, Array]:
        """Trainable arrays by name."""
        ...

    def unflatten(self: _M, arrays: Dict[str, Operand]) -> _M:
        """Copy of the model with the named arrays replaced."""
        ...

    def mean_path(
        self,
        record: Record,
        integration: IntegrationConfig,
        bptt_window: Optional[int] = None,
        grid: Optional[Array] = None,
        step: int = 0,
    ) -> MeanPath:
        """Replay the record over `grid` and return predictions at its observed instants.

        `grid` is the sequence of instants prediction walks; `None` means the record's own
        instants. `step` counts optimizer steps so stochastic regularizers can draw fresh
        noise per step.
        """
        ...


def mse(pred, target, mask=None) -> float:
    """Mean squared error over the entries where `mask` is 1.

    Raises:
        UndefinedLossError: no entry is masked in.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction shape {pred.shape} != target shape {target.shape}")
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask) == 1
    if mask.shape != pred.shape:
        raise ShapeError(f"mse: mask shape {mask.shape} != prediction shape {pred.shape}")
    if not mask.any():
        raise UndefinedLossError("mse is undefined without masked-in entries")
    return float(np.mean((pred[mask] - target[mask]) ** 2))


@dataclass
class TrainReport:
    """Per-epoch filtered MSE; `mse[0]` is the loss before the first epoch."""

    mse: List[float] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list, compare=False)
    params: Optional[object] = field(default=None, compare=False, repr=False)


def _squared_error(preds: Sequence[Operand], targets: Array) -> Tuple[Operand, int]:
    total: Operand = 0.0
    for pred, target in zip(preds, targets):
        diff = nc.sub(pred, target)
        total = nc.add(total, nc.sum_all(nc.hadamard(diff, diff)))
    return total, int(targets.size)


def record_loss(path: MeanPath, forecast_weight: float = 0.0) -> Operand:
    """Filtered MSE of a mean path plus `forecast_weight` times its forecast MSE."""
    if not path.filtered:
        raise UndefinedLossError("record has no observed values")
    sq, n = _squared_error(path.filtered, path.targets)
    loss = nc.scale(sq, 1.0 / n)
    if forecast_weight > 0.0 and path.forecast:
        sq_f, n_f = _squared_error(path.forecast, path.forecast_targets)
        loss = nc.add(loss, nc.scale(sq_f, forecast_weight / n_f))
    return loss


def loss_and_gradient(
    model: MeanPathModel,
    records: Sequence[Record],
    integration: IntegrationConfig,
    forecast_weight: float = 0.0,
    bptt_window: Optional[int] = None,
    grid: Optional[Array] = None,
    step: int = 0,
) -> Tuple[float, Dict[str, Array]]:
    """Mean per-record loss over `records` and its gradient, summed in record order."""
    flat = model.flat()
    grads = {name: np.zeros_like(value) for name, value in flat.items()}
    total = 0.0
    for record in records:
        tape = nc.Tape()
        variables = {name: tape.variable(value) for name, value in flat.items()}
        path = model.unflatten(variables).mean_path(
            record, integration, bptt_window, grid=grid, step=step
        )
        loss = record_loss(path, forecast_weight)
        total += float(nc.value_of(loss))
        if isinstance(loss, nc.Var):
            adjoints = tape.backward(loss)
            for name, var in variables.items():
                grads[name] += adjoints[var]
    n = len(records)
    return total / n, {name: g / n for name, g in grads.items()}


def evaluate(
    model: MeanPathModel,
    records: Sequence[Record],
    integration: IntegrationConfig,
    grid: Optional[Array] = None,
):
    """Pooled filtered MSE over every observed value of `records`."""
    preds, targets = [], []
    for record in records:
        path = model.mean_path(record, integration, grid=grid)
        preds.extend(nc.value_of(p) for p in path.filtered)
        targets.extend(path.targets)
    if not preds:
        raise UndefinedLossError("no observed values to evaluate")
    return mse(np.stack(preds), np.stack(targets))


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: Dict[str, Array]):
        self.cfg = cfg
        self.step_count = 0
        self.first = {k: np.zeros_like(v) for k, v in params.items()}
        self.second = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, Array], grads: Dict[str, Array]) -> Dict[str, Array]:
        cfg = self.cfg
        if cfg.optimizer == "sgd":
            return {k: v - cfg.learning_rate * grads[k] for k, v in params.items()}
        self.step_count += 1
        t = self.step_count
        out = {}
        for k, v in params.items():
            g = grads[k]
            self.first[k] = cfg.beta1 * self.first[k] + (1.0 - cfg.beta1) * g
            self.second[k] = cfg.beta2 * self.second[k] + (1.0 - cfg.beta2) * g * g
            m_hat = self.first[k] / (1.0 - cfg.beta1**t)
            v_hat = self.second[k] / (1.0 - cfg.beta2**t)
            out[k] = v - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return out


def train(
    model: _M,
    records: Sequence[Record],
    cfg: Optional[TrainConfig] = None,
    integration: Optional[IntegrationConfig] = None,
    grid: Optional[Array] = None,
) -> Tuple[_M, TrainReport]:
    """Fit `model` by mini-batch gradient descent on the masked MSE.

    Args:
        model: any `MeanPathModel`.
        records: training records; each needs at least one observed value.
        cfg: optimizer settings; the shuffle order is drawn from `cfg.seed`.
        integration: step settings for models that integrate between observations.
        grid: the instants every record is replayed over, normally the grid prediction will
            use; `None` replays each record over its own instants.

    Returns:
        The trained model and a report whose `mse[0]` is the initial loss.

    Raises:
        DivergenceError: a NaN or infinity appeared; the error carries the partial report and
            the last finite model.
    """
    cfg = cfg or TrainConfig()
    integration = integration or IntegrationConfig()
    records = list(records)
    if not records:
        raise ValidationError("training needs at least one record")
    for r in records:
        if not r.observed.any():
            raise ValidationError(f"{r.record_id}: no observed values to train on")

    report = TrainReport()
    if grid is not None:
        grid = np.asarray(grid, dtype=np.float64)
    report.mse.append(evaluate(model, records, integration, grid))
    logger.info("initial mse=%.6g over %d records", report.mse[0], len(records))

    rng = np.random.default_rng(cfg.seed)
    optimizer = _Optimizer(cfg, model.flat())
    n_steps = 0
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(records))
        for start in range(0, len(order), cfg.batch_size):
            batch = [records[i] for i in order[start : start + cfg.batch_size]]
            try:
                _, grads = loss_and_gradient(
                    model,
                    batch,
                    integration,
                    cfg.forecast_weight,
                    cfg.bptt_window,
                    grid=grid,
                    step=n_steps,
                )
                n_steps += 1
                params = optimizer.step(model.flat(), grads)
                if not all(np.all(np.isfinite(v)) for v in params.values()):
                    raise DivergenceError("non-finite parameters after optimizer step")
                candidate = model.unflatten(params)
            except DivergenceError as e:
                report.params = model
                logger.error("training diverged in epoch %d: %s", epoch, e)
                raise DivergenceError(
                    f"training diverged in epoch {epoch}: {e}",
                    step=epoch,
                    report=report,
                    last_params=model,
                ) from e
            model = candidate
        try:
            epoch_mse = evaluate(model, records, integration, grid)
        except DivergenceError as e:
            report.params = model
            raise DivergenceError(
                f"evaluation diverged after epoch {epoch}",
                step=epoch,
                report=report,
                last_params=model,
            ) from e
        report.mse.append(epoch_mse)
        report.epoch_seconds.append(time.perf_counter() - started)
        logger.info("epoch %d/%d: mse=%.6g", epoch, cfg.epochs, epoch_mse)

    report.params = model
    return model, report
