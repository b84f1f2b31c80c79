#!/usr/bin/env python3

# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Command-line driver for SDE-RNN imputation: synth, train, impute and compare."""

import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from cryptography.hazmat.primitives import hashes
from pydantic import BaseModel, Field

from sdernn.baseline import ClassicGru, mc_predict
from sdernn.checkpoint import KIND_CLASSIC_GRU, load_checkpoint, save_checkpoint
from sdernn.config import (
    BaselineConfig,
    IntegrationConfig,
    ModelConfig,
    SynthConfig,
    TrainConfig,
)
from sdernn.data import (
    Dataset,
    load_csv,
    load_truth_csv,
    normalization_from_manifest,
    normalize,
    read_manifest,
    synthesize,
    write_csv,
    write_manifest,
    write_truth_csv,
)
from sdernn.errors import (
    CheckpointError,
    ConfigError,
    CsvParseError,
    DivergenceError,
    SdeRnnError,
)
from sdernn.evaluation import (
    compare,
    fit_classic_gru,
    format_table,
    plot_rows,
    predict,
    write_bins_csv,
    write_comparison_csv,
)
from sdernn.sde_rnn import ModelParams, impute
from sdernn.training import TrainReport, train

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "SDERNN_LOG_LEVEL"
RUNS_FILE = "runs.jsonl"
DATA_FILE = "data.csv"
TRUTH_FILE = "truth.csv"
MANIFEST_FILE = "dataset.json"
DEFAULT_DAY_MINUTES = 1440

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4

IMPUTATION_COLUMNS = ("record_id", "time", "mean", "variance", "observed")


class RunManifest(BaseModel):
    """One line of the append-only run log."""

    command: str = Field(description="Subcommand that ran.")
    config: Dict[str, Any] = Field(default_factory=dict, description="Configuration snapshot.")
    seeds: Dict[str, int] = Field(default_factory=dict, description="Every seed used.")
    inputs: Dict[str, str] = Field(default_factory=dict, description="Input path to SHA-256.")
    artifacts: List[str] = Field(default_factory=list, description="Files written.")
    started_at: str
    finished_at: Optional[str] = None
    exit_code: Optional[int] = None


def sha256_file(path) -> str:
    """Hex SHA-256 digest of a file."""
    digest = hashes.Hash(hashes.SHA256())
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.finalize().hex()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def append_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    """Append `manifest` as one JSON line to `<out_dir>/runs.jsonl`."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RUNS_FILE
    with open(path, "a", encoding="utf-8") as f:
        f.write(manifest.model_dump_json() + "\n")
    return path


def load_overrides(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    """Read a YAML file of per-section configuration overrides."""
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path}: expected a mapping of sections to mappings")
    return data


def _section(overrides: Dict[str, Dict[str, Any]], name: str, flags: Dict[str, Any]):
    merged = dict(overrides.get(name, {}))
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _integration(args, overrides) -> IntegrationConfig:
    return IntegrationConfig.load(
        _section(
            overrides,
            "integration",
            {"dt": args.dt, "method": args.method, "time_scale": 1.0 / args.day_minutes},
        )
    )


def _noise_fracs(data_path: Path) -> Optional[Dict[str, float]]:
    manifest_path = data_path.parent / MANIFEST_FILE
    if manifest_path.exists():
        return read_manifest(manifest_path)["noise_fracs"]
    return None


def _load_dataset(data_path: str) -> Dataset:
    path = Path(data_path)
    return load_csv(path, _noise_fracs(path))


def _load_truth(data_path: str, truth_path: Optional[str]):
    path = Path(truth_path) if truth_path else Path(data_path).parent / TRUTH_FILE
    return load_truth_csv(path) if path.exists() else {}


def cmd_synth(args, run: RunManifest) -> int:
    """Generate a synthetic dataset with its ground truth and manifest."""
    overrides = load_overrides(args.config)
    cfg = SynthConfig.load(
        _section(
            overrides,
            "synth",
            {
                "n_nodes": args.nodes,
                "seed": args.seed,
                "noise_frac": args.noise_frac,
                "include_reactive": args.include_reactive or None,
            },
        )
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = synthesize(cfg)
    write_csv(dataset, out / DATA_FILE)
    write_truth_csv(dataset, out / TRUTH_FILE)
    write_manifest(dataset, out / MANIFEST_FILE)
    run.config = {"synth": cfg.dump()}
    run.seeds = {"synth": cfg.seed}
    run.artifacts = [str(out / name) for name in (DATA_FILE, TRUTH_FILE, MANIFEST_FILE)]
    print(f"wrote {len(dataset.records)} records to {out}")
    return EXIT_OK


def write_report(report: TrainReport, path: Path) -> None:
    """Write `epoch,mse` rows."""
    frame = pd.DataFrame({"epoch": range(len(report.mse)), "mse": report.mse})
    frame.to_csv(path, index=False, lineterminator="\n")


def cmd_train(args, run: RunManifest) -> int:
    """Train an SDE-RNN or the classic GRU baseline and checkpoint it."""
    overrides = load_overrides(args.config)
    train_cfg = TrainConfig.load(
        _section(
            overrides,
            "train",
            {
                "epochs": args.epochs,
                "learning_rate": args.lr,
                "batch_size": args.batch,
                "seed": args.seed,
                "optimizer": args.optimizer,
                "forecast_weight": args.forecast_weight,
            },
        )
    )
    integration = _integration(args, overrides)
    dataset = normalize(_load_dataset(args.data))
    ckpt = Path(args.out_ckpt)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    report_path = Path(args.report) if args.report else ckpt.with_suffix(".report.csv")
    run.inputs = {args.data: sha256_file(args.data)}
    run.seeds = {"train": train_cfg.seed}

    if args.model == KIND_CLASSIC_GRU:
        model_cfg: Any = BaselineConfig.load(
            _section(overrides, "baseline", {"hidden_size": args.hidden, "seed": args.seed})
        )
        build: Callable[[], Any] = lambda: ClassicGru.initialize(model_cfg)  # noqa: E731
    else:
        model_cfg = ModelConfig.load(
            _section(overrides, "model", {"hidden_size": args.hidden, "seed": args.seed})
        )
        build = lambda: ModelParams.initialize(model_cfg)  # noqa: E731
    run.seeds["model"] = model_cfg.seed
    run.config = {
        "train": train_cfg.dump(),
        "model": model_cfg.dump(),
        "integration": integration.dump(),
    }

    try:
        model, report = train(
            build(), dataset.records, train_cfg, integration, dataset.union_grid
        )
    except DivergenceError as e:
        if e.report is not None:
            write_report(e.report, report_path)
            run.artifacts = [str(report_path)]
        raise

    extra = {
        "config": run.config,
        "normalization": dataset.manifest()["normalization"],
        "model": args.model,
    }
    save_checkpoint(model, ckpt, extra)
    write_report(report, report_path)
    run.artifacts = [str(ckpt), str(report_path)]
    print(f"final mse {report.mse[-1]:.6g} after {train_cfg.epochs} epochs")
    return EXIT_OK


def _grid(dataset: Dataset, kind: str) -> np.ndarray:
    union = dataset.union_grid
    if kind == "union" or not union.size:
        return union
    minutes = np.arange(np.floor(union[0]), np.ceil(union[-1]) + 1.0)
    return np.union1d(minutes, union)


def _restore(checkpoint, dataset: Dataset) -> Dataset:
    return normalize(dataset, normalization_from_manifest(checkpoint.extra))


def _integration_from_checkpoint(checkpoint, args) -> IntegrationConfig:
    stored = checkpoint.extra.get("config", {}).get("integration")
    if stored is None:
        return _integration(args, {})
    return IntegrationConfig.load(stored)


def _check_dims(model) -> None:
    if isinstance(model, ModelParams) and model.input_size != 1:
        raise ConfigError(f"checkpoint expects {model.input_size} inputs; records are scalar")


def cmd_impute(args, run: RunManifest) -> int:
    """Impute every record on the chosen grid, in original units."""
    checkpoint = load_checkpoint(args.ckpt)
    _check_dims(checkpoint.model)
    raw = _load_dataset(args.data)
    run.inputs = {args.ckpt: sha256_file(args.ckpt), args.data: sha256_file(args.data)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if not raw.records:
        pd.DataFrame(columns=list(IMPUTATION_COLUMNS)).to_csv(out, index=False)
        run.artifacts = [str(out)]
        return EXIT_OK

    dataset = _restore(checkpoint, raw)
    integration = _integration_from_checkpoint(checkpoint, args)
    grid = _grid(dataset, args.grid)
    frames = []
    for record in dataset.records:
        if isinstance(checkpoint.model, ModelParams):
            result = impute(checkpoint.model, record, grid, integration)
        else:
            result = mc_predict(
                checkpoint.model, record, grid, args.mc_samples, args.seed, integration
            )
        norm = dataset.normalization[record.record_id]
        frames.append(
            pd.DataFrame(
                {
                    "record_id": record.record_id,
                    "time": result.times,
                    "mean": norm.invert(result.mean_series),
                    "variance": norm.invert_variance(result.variance_series),
                    "observed": result.observed_mask.astype(int),
                },
                columns=list(IMPUTATION_COLUMNS),
            )
        )
    pd.concat(frames, ignore_index=True).to_csv(out, index=False, lineterminator="\n")
    run.config = {"integration": integration.dump(), "grid": args.grid}
    run.artifacts = [str(out)]
    print(f"imputed {len(dataset.records)} records on {grid.size} grid points")
    return EXIT_OK


def _parse_fractions(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--missing: cannot parse {text!r}") from e
    if not values or any(not 0.0 <= v < 1.0 for v in values):
        raise ConfigError(f"--missing: fractions must lie in [0, 1), got {text!r}")
    return values


def cmd_compare(args, run: RunManifest) -> int:
    """Score the SDE-RNN against the MC-dropout baseline at several missing fractions."""
    fractions = _parse_fractions(args.missing)
    checkpoint = load_checkpoint(args.ckpt)
    _check_dims(checkpoint.model)
    raw = _load_dataset(args.data)
    dataset = _restore(checkpoint, raw)
    integration = _integration_from_checkpoint(checkpoint, args)
    run.inputs = {args.ckpt: sha256_file(args.ckpt), args.data: sha256_file(args.data)}

    if args.baseline_ckpt:
        baseline = load_checkpoint(args.baseline_ckpt).model
        run.inputs[args.baseline_ckpt] = sha256_file(args.baseline_ckpt)
    else:
        logger.info("no baseline checkpoint given; training the classic GRU inline")
        baseline, _ = fit_classic_gru(
            dataset, BaselineConfig(seed=args.seed), TrainConfig(seed=args.seed), integration
        )
    models = [(checkpoint.kind, checkpoint.model), (KIND_CLASSIC_GRU, baseline)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare(models, dataset, fractions, args.bins, args.seed, integration, args.mc_samples)
    artifacts = [out / "comparison.csv"]
    write_comparison_csv(rows, artifacts[0])
    for row in rows:
        if row.calibration is not None:
            path = out / f"bins_{row.model}_{100 * row.missing_fraction:.0f}.csv"
            write_bins_csv(row.calibration, path)
            artifacts.append(path)

    truth = _load_truth(args.data, args.truth)
    grid = dataset.union_grid
    for name, model in models:
        for record in dataset.records:
            result = predict(model, record, grid, integration, args.mc_samples, args.seed)
            curve = dataset.ground_truth.get(record.record_id)
            if curve is None and record.record_id in truth:
                norm = dataset.normalization[record.record_id]
                curve = truth[record.record_id]
                values = norm.apply(curve.at(grid))
            else:
                values = curve.at(grid) if curve is not None else None
            path = out / f"plot_{name}_{record.record_id}.csv"
            plot_rows(result, values).to_csv(path, index=False, lineterminator="\n")
            artifacts.append(path)

    run.config = {
        "missing": fractions,
        "bins": args.bins,
        "mc_samples": args.mc_samples,
        "integration": integration.dump(),
    }
    run.seeds = {"missing": args.seed, "mc": args.seed}
    run.artifacts = [str(p) for p in artifacts]
    print(format_table(rows))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "impute": cmd_impute,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every subcommand."""
    parser = argparse.ArgumentParser(prog="imputer", description=__doc__)
    parser.add_argument(
        "--log-level",
        default=os.environ.get(LOG_LEVEL_ENV, "INFO"),
        help=f"logging level (default from ${LOG_LEVEL_ENV} or INFO)",
    )
    parser.add_argument("--config", help="YAML file with per-section configuration overrides")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic feeder dataset")
    synth.add_argument("--nodes", type=int, default=2)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--noise-frac", type=float, default=0.1)
    synth.add_argument("--include-reactive", action="store_true")
    synth.add_argument("--out", default="out")

    def integration_flags(p):
        p.add_argument("--dt", type=float, default=None, help="integration step in minutes")
        p.add_argument("--method", choices=("euler", "rk4"), default="rk4")
        p.add_argument("--day-minutes", type=float, default=DEFAULT_DAY_MINUTES)

    trainer = sub.add_parser("train", help="train a model and write a checkpoint")
    trainer.add_argument("--data", default=f"out/{DATA_FILE}")
    trainer.add_argument("--model", choices=("sde-rnn", KIND_CLASSIC_GRU), default="sde-rnn")
    trainer.add_argument("--epochs", type=int, default=50)
    trainer.add_argument("--lr", type=float, default=0.01)
    trainer.add_argument("--batch", type=int, default=10)
    trainer.add_argument("--hidden", type=int, default=5)
    trainer.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    trainer.add_argument("--forecast-weight", type=float, default=0.0)
    trainer.add_argument("--seed", type=int, default=0)
    trainer.add_argument("--out-ckpt", default="out/model.json")
    trainer.add_argument("--report", default=None, help="training curve CSV")
    integration_flags(trainer)

    imputer = sub.add_parser("impute", help="impute every record with uncertainty")
    imputer.add_argument("--ckpt", default="out/model.json")
    imputer.add_argument("--data", default=f"out/{DATA_FILE}")
    imputer.add_argument("--grid", choices=("union", "1min"), default="union")
    imputer.add_argument("--mc-samples", type=int, default=100)
    imputer.add_argument("--seed", type=int, default=0)
    imputer.add_argument("--out", default="out/imputed.csv")
    integration_flags(imputer)

    comparer = sub.add_parser("compare", help="score models at several missing fractions")
    comparer.add_argument("--ckpt", default="out/model.json")
    comparer.add_argument("--baseline-ckpt", default=None)
    comparer.add_argument("--data", default=f"out/{DATA_FILE}")
    comparer.add_argument("--truth", default=None, help="ground-truth CSV for the plot data")
    comparer.add_argument("--missing", default="0.4,0.6,0.8")
    comparer.add_argument("--bins", type=int, default=5)
    comparer.add_argument("--mc-samples", type=int, default=100)
    comparer.add_argument("--seed", type=int, default=0)
    comparer.add_argument("--out", default="out/compare")
    integration_flags(comparer)
    return parser


def _out_dir(args) -> Path:
    if args.command == "synth":
        return Path(args.out)
    if args.command == "train":
        return Path(args.out_ckpt).parent
    if args.command == "impute":
        return Path(args.out).parent
    return Path(args.out)


def exit_code(error: BaseException) -> int:
    """Map an exception to the process exit code."""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (OSError, CsvParseError, CheckpointError)):
        return EXIT_IO
    if isinstance(error, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=str(args.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    run = RunManifest(command=args.command, started_at=_now())
    try:
        code = COMMANDS[args.command](args, run)
    except (SdeRnnError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        code = exit_code(e)
    run.finished_at = _now()
    run.exit_code = code
    try:
        append_manifest(_out_dir(args), run)
    except OSError as e:
        logger.error("could not append run manifest: %s", e)
        code = code or EXIT_IO
    return code


if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
