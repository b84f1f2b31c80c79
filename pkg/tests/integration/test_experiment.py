# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Day-long two-node experiment; slow, run by the integration tox env."""

from dataclasses import replace

import numpy as np
import pytest
from helpers import desk_experiment, wins

from sdernn import numcore as nc
from sdernn.config import IntegrationConfig, ModelConfig
from sdernn.data import normalize, synthesize
from sdernn.sde_rnn import ModelParams, impute

FRACTIONS = [0.4, 0.6, 0.8]


@pytest.mark.slow
def test_covariances_stay_psd_over_a_day():
    dataset = normalize(synthesize())
    record = dataset.record("node0-V")
    keep = (np.arange(len(record)) % 20 == 0).astype(int)
    record = replace(record, mask=keep)
    model = ModelParams.initialize(ModelConfig())
    result = impute(
        model,
        record,
        dataset.union_grid,
        IntegrationConfig(time_scale=1 / 1440),
        keep_states=True,
    )
    assert len(result) == 1440
    for state in result.states:
        assert nc.min_eigenvalue(state.cov) >= -1e-9
        assert np.max(np.abs(state.cov - state.cov.T)) <= 1e-10
    assert np.all(result.variance_series >= 0)


@pytest.mark.slow
def test_sde_rnn_beats_mc_dropout_baseline(tmp_path):
    seeds = range(5)
    outcomes = []
    for seed in seeds:
        table = desk_experiment(tmp_path / f"seed{seed}", seed)
        outcomes.append(all(wins(table, FRACTIONS).values()))
    assert sum(outcomes) >= 4, f"won on {sum(outcomes)} of {len(outcomes)} seeds"
