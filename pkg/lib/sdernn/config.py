# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Validated configuration models.

Every knob of the pipeline lives in one of the pydantic models below. They are frozen and
reject unknown keys, so a configuration snapshot written into a run manifest or a checkpoint
can be loaded back verbatim:

```python
cfg = TrainConfig.load({"epochs": 20, "seed": 3})
snapshot = cfg.dump()
assert TrainConfig.load(snapshot) == cfg
```
"""

import logging
from typing import Any, Dict, Literal, Mapping, Optional, Type, TypeVar

import pydantic
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, field_validator

from sdernn.errors import ConfigError

logger = logging.getLogger(__name__)

_M = TypeVar("_M", bound="ConfigModel")


class ConfigModel(BaseModel):
    """Base configuration model."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    @classmethod
    def load(cls: Type[_M], data: Optional[Mapping[str, Any]] = None) -> _M:
        """Build this model from a mapping, raising `ConfigError` on invalid content."""
        try:
            return cls.model_validate(dict(data or {}))
        except pydantic.ValidationError as e:
            msg = f"invalid {cls.__name__}: {e}"
            logger.debug(msg, exc_info=True)
            raise ConfigError(msg) from e

    def dump(self) -> Dict[str, Any]:
        """Return a JSON-compatible snapshot of this model."""
        return self.model_dump(mode="json")


class IntegrationConfig(ConfigModel):
    """Fixed-step integration settings for the moment ODEs."""

    dt: Optional[PositiveFloat] = Field(
        default=None,
        description="Step in record time units; None means 1/10 of the finest grid gap.",
    )
    method: Literal["euler", "rk4"] = Field(default="rk4", description="Stepping scheme.")
    time_scale: PositiveFloat = Field(
        default=1.0, description="Factor converting record time units to integrator time."
    )

    def resolve(self, times) -> "IntegrationConfig":
        """Return a copy with `dt` filled in from the finest gap of `times`."""
        if self.dt is not None:
            return self
        gaps = [b - a for a, b in zip(times[:-1], times[1:])]
        if not gaps:
            return self.model_copy(update={"dt": 1.0})
        return self.model_copy(update={"dt": min(gaps) / 10.0})


class ModelConfig(ConfigModel):
    """Architecture and initialization of an SDE-RNN model."""

    hidden_size: PositiveInt = Field(default=5, description="GRU hidden size m.")
    input_size: PositiveInt = Field(default=1, description="Input size d.")
    output_size: PositiveInt = Field(default=1, description="Output head size.")
    drift_hidden: PositiveInt = Field(default=100, description="Drift net hidden units.")
    diffusion_hidden: PositiveInt = Field(default=100, description="Diffusion net hidden units.")
    initial_cov: float = Field(default=0.0, ge=0.0, description="P0 = initial_cov * I.")
    q_diag: float = Field(default=1.0, ge=0.0, description="Brownian diffusion Q = q_diag * I.")
    seed: int = Field(default=0, description="Initialization seed.")


class TrainConfig(ConfigModel):
    """Mini-batch training settings."""

    learning_rate: PositiveFloat = 0.01
    batch_size: PositiveInt = 10
    epochs: int = Field(default=50, ge=0)
    seed: int = 0
    optimizer: Literal["adam", "sgd"] = "adam"
    forecast_weight: float = Field(
        default=0.0,
        ge=0.0,
        description="Weight of the pre-update prediction MSE added to the filtered MSE.",
    )
    bptt_window: Optional[PositiveInt] = Field(
        default=None, description="Cut the tape every N observations; None keeps it whole."
    )
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: PositiveFloat = 1e-8


class BaselineConfig(ConfigModel):
    """Classic GRU + MC-dropout baseline settings."""

    dropout_rate: float = Field(default=0.3, gt=0.0, lt=1.0)
    mc_samples: PositiveInt = 100
    hidden_size: PositiveInt = 5
    head_hidden: PositiveInt = 100
    seed: int = Field(default=0, ge=0, description="Initialization and dropout mask seed.")


class SynthConfig(ConfigModel):
    """Synthetic feeder generator settings."""

    n_nodes: PositiveInt = 2
    day_minutes: PositiveInt = 1440
    ami_period: PositiveInt = 15
    scada_period: PositiveInt = 1
    noise_frac: float = Field(default=0.1, ge=0.0)
    scada_noise_frac: float = Field(default=0.001, ge=0.0)
    power_factor: float = Field(default=0.9, gt=0.0, le=1.0)
    include_reactive: bool = False
    scada_every: PositiveInt = 2
    seed: int = 0

    @field_validator("ami_period", "scada_period")
    @classmethod
    def validate_period(cls, period, info):
        """Periods must divide the day."""
        day = info.data.get("day_minutes")
        if day is not None and day % period != 0:
            raise ValueError(f"{info.field_name}={period} does not divide day_minutes={day}")
        return period
