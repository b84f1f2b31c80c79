# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Accuracy and calibration metrics, and the model comparison protocol.

Calibration is measured with the expected normalized calibration error: predictions are
sorted by their predicted standard deviation, cut into `n_bins` contiguous blocks, and each
block compares its root mean predicted variance (mVar) with its realized RMSE:

    ENCE = sqrt( mean_j |mVar_j - RMSE_j| / mVar_j )

`CalibrationReport.miscalibration` is the same mean without the square root.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from sdernn.baseline import ClassicGru, mc_predict
from sdernn.config import BaselineConfig, IntegrationConfig, TrainConfig
from sdernn.data import Dataset, inject_missing
from sdernn.errors import ContractError, ShapeError, ValidationError
from sdernn.sde_rnn import ImputationResult, ModelParams, align_to_grid, impute
from sdernn.training import TrainReport, mse, train

logger = logging.getLogger(__name__)

DEFAULT_BINS = 5
DEFAULT_MISSING_FRACTIONS = (0.4, 0.6, 0.8)
VARIANCE_FLOOR = 1e-12

COMPARISON_COLUMNS = ("model", "missing_fraction", "mse", "ence")
BIN_COLUMNS = ("bin", "sigma_min", "sigma_max", "mvar", "rmse")
PLOT_COLUMNS = ("time", "truth", "mean", "lo", "hi")


@dataclass(frozen=True)
class CalibrationBin:
    """One block of the sigma-sorted predictions; `start:stop` indexes the sorted order."""

    index: int
    start: int
    stop: int
    sigma_min: float
    sigma_max: float
    mvar: float
    rmse: float


@dataclass(frozen=True)
class CalibrationReport:
    """Per-bin calibration and the aggregate errors."""

    n_bins: int
    bins: Tuple[CalibrationBin, ...]
    ence: float
    miscalibration: float


def ence(pred_mean, pred_var, truth, n_bins: int = DEFAULT_BINS) -> CalibrationReport:
    """Expected normalized calibration error.

    When `n_bins` does not divide the number of points, the remainder joins the last bin.

    Raises:
        ValidationError: a variance is not strictly positive, or there are fewer points than
            bins.
    """
    pred_mean = np.asarray(pred_mean, dtype=np.float64).reshape(-1)
    pred_var = np.asarray(pred_var, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if not pred_mean.shape == pred_var.shape == truth.shape:
        raise ShapeError(
            f"ence: lengths differ ({pred_mean.size}, {pred_var.size}, {truth.size})"
        )
    if n_bins < 1:
        raise ValidationError(f"n_bins must be >= 1, got {n_bins}")
    if pred_mean.size < n_bins:
        raise ValidationError(f"ence needs at least {n_bins} points, got {pred_mean.size}")
    if not np.all(pred_var > 0):
        raise ValidationError("ence: predicted variances must be strictly positive")

    sigma = np.sqrt(pred_var)
    order = np.argsort(sigma, kind="stable")
    size = pred_mean.size // n_bins
    bins = []
    for j in range(n_bins):
        start = j * size
        stop = pred_mean.size if j == n_bins - 1 else start + size
        idx = order[start:stop]
        bins.append(
            CalibrationBin(
                index=j,
                start=start,
                stop=stop,
                sigma_min=float(sigma[idx].min()),
                sigma_max=float(sigma[idx].max()),
                mvar=float(np.sqrt(np.mean(pred_var[idx]))),
                rmse=float(np.sqrt(np.mean((pred_mean[idx] - truth[idx]) ** 2))),
            )
        )
    miscalibration = float(np.mean([abs(b.mvar - b.rmse) / b.mvar for b in bins]))
    return CalibrationReport(n_bins, tuple(bins), float(np.sqrt(miscalibration)), miscalibration)


Predictor = Union[ModelParams, ClassicGru]


def predict(
    model: Predictor,
    record,
    grid,
    integration: Optional[IntegrationConfig] = None,
    mc_samples: int = 100,
    seed: int = 0,
) -> ImputationResult:
    """Impute with an SDE-RNN or MC-dropout sample a baseline."""
    if isinstance(model, ModelParams):
        return impute(model, record, grid, integration)
    if isinstance(model, ClassicGru):
        return mc_predict(model, record, grid, mc_samples, seed, integration)
    raise ContractError(f"cannot predict with a {type(model).__name__}")


def classic_gru_baseline(
    dataset: Dataset,
    cfg: Optional[BaselineConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    integration: Optional[IntegrationConfig] = None,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Train the MC-dropout GRU on `dataset` and predict every record on its union grid.

    Returns:
        Per-record sample means and sample variances on `dataset.union_grid`.
    """
    model, _ = fit_classic_gru(dataset, cfg, train_cfg, integration)
    cfg = cfg or BaselineConfig()
    grid = dataset.union_grid
    means, variances = {}, {}
    for record in dataset.records:
        result = mc_predict(model, record, grid, cfg.mc_samples, cfg.seed, integration)
        means[record.record_id] = result.mean_series
        variances[record.record_id] = result.variance_series
    return means, variances


def fit_classic_gru(
    dataset: Dataset,
    cfg: Optional[BaselineConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    integration: Optional[IntegrationConfig] = None,
) -> Tuple[ClassicGru, TrainReport]:
    """Initialize the baseline and train it over the union grid it predicts on."""
    model = ClassicGru.initialize(cfg)
    return train(model, dataset.records, train_cfg, integration, dataset.union_grid)


@dataclass(frozen=True)
class ComparisonRow:
    """Scores of one model at one missing fraction."""

    model: str
    missing_fraction: float
    mse: float
    ence: float
    calibration: Optional[CalibrationReport] = field(default=None, compare=False)


def score(
    model: Predictor,
    dataset: Dataset,
    n_bins: int = DEFAULT_BINS,
    integration: Optional[IntegrationConfig] = None,
    mc_samples: int = 100,
    seed: int = 0,
) -> Tuple[float, Optional[CalibrationReport]]:
    """MSE and calibration on the held-out observations of a masked dataset."""
    grid = dataset.union_grid
    means, variances, truths = [], [], []
    for record in dataset.records:
        points = dataset.evaluation_points(record.record_id)
        if not points.size:
            continue
        result = predict(model, record, grid, integration, mc_samples, seed)
        positions = align_to_grid(record, grid)[points]
        means.append(result.mean_series[positions])
        variances.append(result.variance_series[positions])
        truths.append(record.values[points])
    if not means:
        logger.warning("no held-out points to score")
        return float("nan"), None
    mean = np.concatenate(means)
    var = np.concatenate(variances)
    truth = np.concatenate(truths)
    floored = var < VARIANCE_FLOOR
    if floored.any():
        logger.warning(
            "flooring %d of %d predicted variances at %g", floored.sum(), var.size, VARIANCE_FLOOR
        )
        var = np.maximum(var, VARIANCE_FLOOR)
    error = mse(mean, truth)
    if mean.size < n_bins:
        logger.warning("only %d held-out points for %d bins; ence skipped", mean.size, n_bins)
        return error, None
    return error, ence(mean, var, truth, n_bins)


def compare(
    models: Sequence[Tuple[str, Predictor]],
    dataset: Dataset,
    missing_fractions: Sequence[float] = DEFAULT_MISSING_FRACTIONS,
    n_bins: int = DEFAULT_BINS,
    seed: int = 0,
    integration: Optional[IntegrationConfig] = None,
    mc_samples: int = 100,
) -> List[ComparisonRow]:
    """Score every named model at every missing fraction.

    For each fraction the same seeded mask is applied for all models, and both metrics are
    computed on the hidden observations only.
    """
    rows = []
    for fraction in missing_fractions:
        masked = inject_missing(dataset, fraction, seed)
        for name, model in models:
            error, report = score(model, masked, n_bins, integration, mc_samples, seed)
            value = report.ence if report is not None else float("nan")
            rows.append(ComparisonRow(name, float(fraction), error, value, report))
            logger.info(
                "%s at %.0f%% missing: mse=%.6g ence=%.6g", name, 100 * fraction, error, value
            )
    return rows


def comparison_frame(rows: Sequence[ComparisonRow]) -> pd.DataFrame:
    """Rows as a DataFrame with the comparison CSV columns."""
    return pd.DataFrame(
        [(r.model, r.missing_fraction, r.mse, r.ence) for r in rows],
        columns=list(COMPARISON_COLUMNS),
    )


def write_comparison_csv(rows: Sequence[ComparisonRow], path: Union[str, Path]) -> None:
    """Write `model,missing_fraction,mse,ence`."""
    comparison_frame(rows).to_csv(path, index=False, lineterminator="\n")


def format_table(rows: Sequence[ComparisonRow]) -> str:
    """Human-readable comparison table."""
    if not rows:
        return "(no results)"
    frame = comparison_frame(rows)
    frame["missing_fraction"] = [f"{100 * f:.0f}%" for f in frame["missing_fraction"]]
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def bins_frame(report: CalibrationReport) -> pd.DataFrame:
    """Per-bin report as a DataFrame."""
    return pd.DataFrame(
        [(b.index, b.sigma_min, b.sigma_max, b.mvar, b.rmse) for b in report.bins],
        columns=list(BIN_COLUMNS),
    )


def write_bins_csv(report: CalibrationReport, path: Union[str, Path]) -> None:
    """Write `bin,sigma_min,sigma_max,mvar,rmse`."""
    bins_frame(report).to_csv(path, index=False, lineterminator="\n")


def plot_rows(result: ImputationResult, truth=None) -> pd.DataFrame:
    """Plot data: time, truth, mean and the mean +/- 2 sigma band.

    `truth` defaults to NaN everywhere.
    """
    mean = result.mean_series
    sigma = np.sqrt(np.maximum(result.variance_series, 0.0))
    truth = np.full(mean.shape, np.nan) if truth is None else np.asarray(truth, dtype=float)
    if truth.shape != mean.shape:
        raise ShapeError(f"truth has shape {truth.shape}, predictions {mean.shape}")
    return pd.DataFrame(
        {
            "time": result.times,
            "truth": truth,
            "mean": mean,
            "lo": mean - 2.0 * sigma,
            "hi": mean + 2.0 * sigma,
        },
        columns=list(PLOT_COLUMNS),
    )
