# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

import logging
from pathlib import Path
from typing import Dict, List

import pandas as pd

import imputer

logger = logging.getLogger(__name__)


def run_cli(*argv) -> None:
    """Run one CLI command in-process and fail unless it exits cleanly."""
    code = imputer.main([str(a) for a in argv])
    assert code == imputer.EXIT_OK, f"{argv} exited with {code}"


def desk_experiment(out: Path, seed: int, epochs: int = 50) -> pd.DataFrame:
    """Synthesize the two-node day, train both models and compare them.

    Returns the comparison table.
    """
    data = out / "data"
    models = out / "models"
    run_cli("synth", "--out", data, "--seed", seed)
    for kind, name in (("sde-rnn", "model.json"), ("classic-gru", "baseline.json")):
        run_cli(
            "train",
            "--model",
            kind,
            "--data",
            data / imputer.DATA_FILE,
            "--out-ckpt",
            models / name,
            "--epochs",
            epochs,
            "--seed",
            seed,
            "--forecast-weight",
            1,
        )
    run_cli(
        "compare",
        "--ckpt",
        models / "model.json",
        "--baseline-ckpt",
        models / "baseline.json",
        "--data",
        data / imputer.DATA_FILE,
        "--seed",
        seed,
        "--out",
        out / "compare",
    )
    return pd.read_csv(out / "compare" / "comparison.csv")


def wins(table: pd.DataFrame, fractions: List[float]) -> Dict[float, bool]:
    """Whether the SDE-RNN beats the baseline on both MSE and ENCE, per missing fraction."""
    out = {}
    for fraction in fractions:
        rows = table[table["missing_fraction"] == fraction].set_index("model")
        sde, gru = rows.loc["sde-rnn"], rows.loc["classic-gru"]
        out[fraction] = bool(sde["mse"] < gru["mse"] and sde["ence"] < gru["ence"])
        logger.info(
            "%.0f%% missing: sde-rnn mse=%.4g ence=%.4g, classic-gru mse=%.4g ence=%.4g",
            100 * fraction,
            sde["mse"],
            sde["ence"],
            gru["mse"],
            gru["ence"],
        )
    return out
