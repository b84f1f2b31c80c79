# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""GRU cell and its analytic Jacobians.

The cell follows the usual gate layout:

    z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    h' = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h+ = z * h + (1 - z) * h'

`jacobian_h` and `jacobian_x` return d(h+)/dh and d(h+)/dx at the operating point (h, x); they
are what the covariance update in `sdernn.moments` consumes.
"""

from dataclasses import dataclass, fields
from typing import Dict, Optional

import numpy as np

from sdernn import numcore as nc
from sdernn.errors import ShapeError
from sdernn.numcore import Array, Matrix, Operand

_INPUT_WEIGHTS = ("W_iz", "W_ir", "W_in")
_HIDDEN_WEIGHTS = ("W_hz", "W_hr", "W_hn")
_BIASES = ("b_iz", "b_ir", "b_in", "b_hz", "b_hr", "b_hn")


@dataclass(frozen=True)
class GruParams:
    """All twelve GRU weight and bias arrays.

    Input weights are (m, d), hidden weights (m, m) and biases (m,). Entries may be `Var`
    handles while a training tape is active.
    """

    W_iz: Operand  # noqa: N815
    W_ir: Operand  # noqa: N815
    W_in: Operand  # noqa: N815
    W_hz: Operand  # noqa: N815
    W_hr: Operand  # noqa: N815
    W_hn: Operand  # noqa: N815
    b_iz: Operand
    b_ir: Operand
    b_in: Operand
    b_hz: Operand
    b_hr: Operand
    b_hn: Operand

    def __post_init__(self):
        m, d = self.hidden_size, self.input_size
        for name in _INPUT_WEIGHTS:
            _expect_shape(name, getattr(self, name), (m, d))
        for name in _HIDDEN_WEIGHTS:
            _expect_shape(name, getattr(self, name), (m, m))
        for name in _BIASES:
            _expect_shape(name, getattr(self, name), (m,))
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, nc.Var) and not np.all(np.isfinite(value)):
                raise ShapeError(f"{f.name}: entries must be finite")

    @property
    def hidden_size(self) -> int:
        """Hidden size m."""
        return nc.value_of(self.W_hz).shape[0]

    @property
    def input_size(self) -> int:
        """Input size d."""
        return nc.value_of(self.W_iz).shape[1]

    def arrays(self) -> Dict[str, Operand]:
        """Name to array mapping of every parameter."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, Operand]) -> "GruParams":
        """Inverse of `arrays`."""
        return cls(**{f.name: arrays[f.name] for f in fields(cls)})

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int) -> "GruParams":
        """All-zero parameters."""
        m, d = hidden_size, input_size
        arrays = {name: np.zeros((m, d)) for name in _INPUT_WEIGHTS}
        arrays.update({name: np.zeros((m, m)) for name in _HIDDEN_WEIGHTS})
        arrays.update({name: np.zeros(m) for name in _BIASES})
        return cls.from_arrays(arrays)

    @classmethod
    def initialize(
        cls, hidden_size: int, input_size: int, rng: Optional[np.random.Generator] = None
    ) -> "GruParams":
        """Draw every entry from U(-1/sqrt(m), 1/sqrt(m))."""
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden_size)
        template = cls.zeros(hidden_size, input_size)
        return cls.from_arrays(
            {
                name: rng.uniform(-bound, bound, size=np.shape(value))
                for name, value in template.arrays().items()
            }
        )


def _expect_shape(name: str, value: Operand, shape) -> None:
    actual = nc.value_of(value).shape
    if actual != shape:
        raise ShapeError(f"{name}: expected shape {shape}, got {actual}")


@dataclass(frozen=True)
class GruStep:
    """Result of one GRU step with the gates kept for the Jacobians."""

    h_new: Operand
    z: Operand
    r: Operand
    h_candidate: Operand
    # W_hn h + b_hn, shared by both Jacobians.
    hidden_reset_input: Operand


def _check_inputs(params: GruParams, h_prev: Operand, x: Operand) -> None:
    m, d = params.hidden_size, params.input_size
    if nc.value_of(h_prev).shape != (m,):
        raise ShapeError(f"h_prev: expected shape ({m},), got {nc.value_of(h_prev).shape}")
    if nc.value_of(x).shape != (d,):
        raise ShapeError(f"x: expected shape ({d},), got {nc.value_of(x).shape}")


def gru_forward(params: GruParams, h_prev: Operand, x: Operand) -> GruStep:
    """Advance the hidden state by one GRU step."""
    _check_inputs(params, h_prev, x)
    p = params
    z = nc.sigmoid(nc.add(nc.affine(p.W_iz, x, p.b_iz), nc.affine(p.W_hz, h_prev, p.b_hz)))
    r = nc.sigmoid(nc.add(nc.affine(p.W_ir, x, p.b_ir), nc.affine(p.W_hr, h_prev, p.b_hr)))
    hidden_reset_input = nc.affine(p.W_hn, h_prev, p.b_hn)
    h_candidate = nc.tanh(
        nc.add(nc.affine(p.W_in, x, p.b_in), nc.hadamard(r, hidden_reset_input))
    )
    h_new = nc.add(nc.hadamard(z, h_prev), nc.hadamard(nc.sub(1.0, z), h_candidate))
    return GruStep(h_new, z, r, h_candidate, hidden_reset_input)


def _plain(params: GruParams) -> GruParams:
    return GruParams.from_arrays({k: nc.value_of(v) for k, v in params.arrays().items()})


def jacobian_h(params: GruParams, h_prev: Array, x: Array) -> Matrix:
    """Jacobian d(h_new)/d(h_prev), shape (m, m)."""
    params = _plain(params)
    h_prev, x = nc.value_of(h_prev), nc.value_of(x)
    step = gru_forward(params, h_prev, x)
    z, r, hc, n_in = step.z, step.r, step.h_candidate, step.hidden_reset_input

    dz = (z * (1.0 - z))[:, None] * params.W_hz
    dr = (r * (1.0 - r))[:, None] * params.W_hr
    dhc = (1.0 - hc * hc)[:, None] * (n_in[:, None] * dr + r[:, None] * params.W_hn)
    # h_prev * dz + diag(z) + h' * d(1 - z) + (1 - z) * dh'
    return (h_prev - hc)[:, None] * dz + np.diag(z) + (1.0 - z)[:, None] * dhc


def jacobian_x(params: GruParams, h_prev: Array, x: Array) -> Matrix:
    """Jacobian d(h_new)/dx, shape (m, d)."""
    params = _plain(params)
    h_prev, x = nc.value_of(h_prev), nc.value_of(x)
    step = gru_forward(params, h_prev, x)
    z, r, hc, n_in = step.z, step.r, step.h_candidate, step.hidden_reset_input

    dz = (z * (1.0 - z))[:, None] * params.W_iz
    dr = (r * (1.0 - r))[:, None] * params.W_ir
    dhc = (1.0 - hc * hc)[:, None] * (params.W_in + n_in[:, None] * dr)
    return (h_prev - hc)[:, None] * dz + (1.0 - z)[:, None] * dhc


class GruCell:
    """Adapter exposing a GRU through the transition-cell interface used by the CVRNN update."""

    def __init__(self, params: GruParams):
        self.params = params

    @property
    def hidden_size(self) -> int:
        """Hidden size m."""
        return self.params.hidden_size

    @property
    def input_size(self) -> int:
        """Input size d."""
        return self.params.input_size

    def step(self, h_prev: Operand, x: Operand) -> Operand:
        """Next hidden state."""
        return gru_forward(self.params, h_prev, x).h_new

    def jacobian_h(self, h_prev: Array, x: Array) -> Matrix:
        """d(next)/d(h_prev)."""
        return jacobian_h(self.params, h_prev, x)

    def jacobian_x(self, h_prev: Array, x: Array) -> Matrix:
        """d(next)/dx."""
        return jacobian_x(self.params, h_prev, x)
