# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

import functools
import logging
from datetime import datetime
from pathlib import Path

import pytest
import yaml

import imputer
from helpers import run_cli

logger = logging.getLogger(__name__)

store = {}

SMALL_CONFIG = {
    "synth": {"day_minutes": 120},
    "model": {"drift_hidden": 8, "diffusion_hidden": 8},
    "baseline": {"head_hidden": 8, "mc_samples": 10},
}


def timed_memoizer(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        fname = func.__qualname__
        logger.info("Started: %s", fname)
        start_time = datetime.now()
        if fname in store:
            ret = store[fname]
        else:
            logger.info("Return for %s not cached", fname)
            ret = func(*args, **kwargs)
            store[fname] = ret
        logger.info("Finished: %s in %s seconds", fname, datetime.now() - start_time)
        return ret

    return wrapper


@pytest.fixture(scope="module")
def workdir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("pipeline")


@pytest.fixture(scope="module")
def small_config(workdir) -> Path:
    path = workdir / "config.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return path


@pytest.fixture(scope="module")
@timed_memoizer
def trained(workdir, small_config) -> Path:
    """Synthesize a two-hour feeder and train both models on it with two epochs."""
    data = workdir / "data"
    run_cli("--config", small_config, "synth", "--out", data)
    for kind, name in (("sde-rnn", "model.json"), ("classic-gru", "baseline.json")):
        run_cli(
            "--config",
            small_config,
            "train",
            "--model",
            kind,
            "--data",
            data / imputer.DATA_FILE,
            "--out-ckpt",
            workdir / "models" / name,
            "--epochs",
            2,
            "--hidden",
            3,
        )
    return workdir
