# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

import unittest

import numpy as np
import pydantic

from sdernn.config import (
    BaselineConfig,
    IntegrationConfig,
    ModelConfig,
    SynthConfig,
    TrainConfig,
)
from sdernn.errors import ConfigError


class TestConfigLoading(unittest.TestCase):
    def test_defaults(self):
        model = ModelConfig.load()
        self.assertEqual(model.hidden_size, 5)
        self.assertEqual(model.drift_hidden, 100)
        self.assertEqual(TrainConfig.load().optimizer, "adam")
        self.assertEqual(TrainConfig.load().forecast_weight, 0.0)
        self.assertEqual(BaselineConfig.load().mc_samples, 100)
        self.assertEqual(SynthConfig.load().ami_period, 15)

    def test_dump_round_trip(self):
        cfg = TrainConfig.load({"epochs": 20, "seed": 3, "bptt_window": 8})
        self.assertEqual(TrainConfig.load(cfg.dump()), cfg)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            ModelConfig.load({"hiden_size": 4})
        self.assertIn("hiden_size", str(ctx.exception))

    def test_out_of_range_values(self):
        for cls, data in (
            (TrainConfig, {"epochs": -1}),
            (TrainConfig, {"optimizer": "rmsprop"}),
            (BaselineConfig, {"dropout_rate": 0.0}),
            (BaselineConfig, {"dropout_rate": 1.0}),
            (IntegrationConfig, {"dt": 0.0}),
            (IntegrationConfig, {"method": "heun"}),
            (SynthConfig, {"day_minutes": 100, "ami_period": 15}),
            (ModelConfig, {"initial_cov": -1e-3}),
        ):
            with self.subTest(cls=cls.__name__, data=data):
                with self.assertRaises(ConfigError):
                    cls.load(data)

    def test_frozen(self):
        cfg = ModelConfig.load()
        with self.assertRaises(pydantic.ValidationError):
            cfg.hidden_size = 3  # type: ignore[misc]


class TestIntegrationResolve(unittest.TestCase):
    def test_keeps_explicit_step(self):
        cfg = IntegrationConfig(dt=0.5)
        self.assertIs(cfg.resolve(np.array([0.0, 1.0])), cfg)

    def test_tenth_of_finest_gap(self):
        cfg = IntegrationConfig().resolve(np.array([0.0, 15.0, 16.0, 30.0]))
        self.assertAlmostEqual(cfg.dt, 0.1)

    def test_single_instant(self):
        self.assertEqual(IntegrationConfig().resolve(np.array([5.0])).dt, 1.0)
