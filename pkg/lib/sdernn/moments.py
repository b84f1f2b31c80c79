# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Gaussian moment propagation through the GRU update and the output head.

At an observed instant the hidden state h and the input x are both treated as Gaussian and
pushed through the GRU cell by first-order linearization:

    mean' = v(mean, x)
    cov'  = Jh cov Jh^T + Jx Sigma Jx^T

with Jh, Jx the cell Jacobians at (mean, x). The hidden state and the input noise are assumed
independent, so no cross-covariance term appears.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Union

import numpy as np

from sdernn import numcore as nc
from sdernn.errors import ShapeError, ValidationError
from sdernn.gru import GruCell, GruParams
from sdernn.numcore import Array, Matrix, Operand, Vector

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-10
DEFAULT_NOISE_FRAC = 0.1


class TransitionCell(Protocol):
    """Anything with a step function and its two Jacobians."""

    hidden_size: int
    input_size: int

    def step(self, h_prev: Operand, x: Operand) -> Operand:  # noqa: D102
        ...

    def jacobian_h(self, h_prev: Array, x: Array) -> Matrix:  # noqa: D102
        ...

    def jacobian_x(self, h_prev: Array, x: Array) -> Matrix:  # noqa: D102
        ...


def _check_covariance(cov: Matrix, name: str) -> None:
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOLERANCE:
        raise ValidationError(f"{name}: not symmetric")
    lowest = nc.min_eigenvalue(cov)
    if lowest < -nc.PSD_TOLERANCE:
        raise ValidationError(f"{name}: not positive semi-definite (min eigenvalue {lowest:.3g})")


@dataclass(frozen=True)
class GaussianState:
    """Mean and covariance of the hidden state."""

    mean: Vector
    cov: Matrix

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1:
            raise ShapeError(f"mean: expected a vector, got shape {mean.shape}")
        cov = nc.as_matrix(self.cov, mean.size, mean.size, "cov")
        _check_covariance(cov, "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def size(self) -> int:
        """State dimension m."""
        return self.mean.size

    @classmethod
    def zeros(cls, size: int, cov_scale: float = 0.0) -> "GaussianState":
        """Zero mean with covariance `cov_scale * I`."""
        return cls(np.zeros(size), cov_scale * np.eye(size))


@dataclass(frozen=True)
class ObservationNoise:
    """Covariance of additive Gaussian input noise."""

    sigma: Matrix

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ShapeError(f"sigma: expected a square matrix, got shape {sigma.shape}")
        _check_covariance(sigma, "sigma")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_std(cls, std) -> "ObservationNoise":
        """Diagonal noise from per-channel standard deviations."""
        return cls(np.diag(np.square(np.atleast_1d(np.asarray(std, dtype=np.float64)))))


def default_noise(x, frac: float = DEFAULT_NOISE_FRAC) -> ObservationNoise:
    """Noise with std `frac * |x|` per channel."""
    return ObservationNoise.from_std(frac * np.abs(np.atleast_1d(x)))


@dataclass(frozen=True)
class OutputEstimate:
    """Mean and covariance of the model output."""

    mean: Vector
    cov: Matrix


@dataclass(frozen=True)
class AffineHead:
    """Output map `o = W h + b`."""

    W: Operand  # noqa: N815
    b: Operand

    def __post_init__(self):
        w, b = nc.value_of(self.W), nc.value_of(self.b)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"head: weight {w.shape} and bias {b.shape} do not conform")

    @property
    def input_size(self) -> int:
        """Hidden size the head consumes."""
        return nc.value_of(self.W).shape[1]

    @property
    def output_size(self) -> int:
        """Output dimension."""
        return nc.value_of(self.W).shape[0]

    def forward(self, h: Operand) -> Operand:
        """Apply the head."""
        return nc.affine(self.W, h, self.b)

    def jacobian(self, h: Optional[Array] = None) -> Matrix:
        """The head is affine so its Jacobian is W everywhere."""
        return np.array(nc.value_of(self.W), copy=True)

    @classmethod
    def initialize(
        cls, output_size: int, hidden_size: int, rng: Optional[np.random.Generator] = None
    ) -> "AffineHead":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden_size)
        return cls(
            rng.uniform(-bound, bound, size=(output_size, hidden_size)),
            rng.uniform(-bound, bound, size=output_size),
        )


def _as_cell(params: Union[GruParams, TransitionCell]) -> TransitionCell:
    if isinstance(params, GruParams):
        return GruCell(params)
    return params


def cvrnn_update(
    params: Union[GruParams, TransitionCell],
    state: GaussianState,
    x,
    noise: ObservationNoise,
) -> GaussianState:
    """Push a Gaussian hidden state and a noisy input through one cell step.

    Args:
        params: GRU parameters, or any transition cell exposing `step`, `jacobian_h` and
            `jacobian_x`.
        state: hidden-state moments before the update.
        x: observed input, length d.
        noise: input noise covariance, (d, d).

    Returns:
        The linearized moments after the update, re-symmetrized.
    """
    cell = _as_cell(params)
    m, d = cell.hidden_size, cell.input_size
    if state.size != m:
        raise ShapeError(f"state: expected size {m}, got {state.size}")
    x = nc.as_vector(x, d, "x")
    if noise.sigma.shape != (d, d):
        raise ShapeError(f"noise: expected shape ({d}, {d}), got {noise.sigma.shape}")

    mean = nc.value_of(cell.step(state.mean, x))
    jh = cell.jacobian_h(state.mean, x)
    jx = cell.jacobian_x(state.mean, x)
    cov = jh @ state.cov @ jh.T + jx @ noise.sigma @ jx.T
    return GaussianState(mean, nc.clamp_psd(cov))


def output_transform(head: AffineHead, state: GaussianState) -> OutputEstimate:
    """Map hidden-state moments through the output head."""
    if head.input_size != state.size:
        raise ShapeError(f"head expects hidden size {head.input_size}, state has {state.size}")
    mean = nc.value_of(head.forward(state.mean))
    jac = head.jacobian(state.mean)
    return OutputEstimate(mean, nc.clamp_psd(jac @ state.cov @ jac.T))
