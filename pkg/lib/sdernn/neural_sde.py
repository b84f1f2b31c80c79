# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""Neural SDE for the hidden state between observations.

## Overview.

Between two observed instants the hidden state follows the Ito SDE

    dh = f(h) dt + diag(g(h)) dB,    dB ~ N(0, Q dt)

where f (drift) and g (diffusion) are one-hidden-layer networks and Q is diagonal. Rather than
sampling paths, `propagate_moments` integrates the linearized mean and covariance ODEs

    dm/dt = f(m)
    dP/dt = P F^T + F P + diag(g(m)) Q diag(g(m))

with F the drift Jacobian at m. `sample_paths` is an Euler-Maruyama ensemble of the same SDE;
it exists so the moment integrator can be checked against brute force:

```python
params = SdeParams.initialize(hidden_size=2, drift_hidden=8, diffusion_hidden=8)
state = propagate_moments(params, GaussianState.zeros(2), 0.0, 0.2, IntegrationConfig(dt=1e-3))
paths = sample_paths(params, np.zeros(2), 0.0, 0.2, n_paths=100_000, dt=1e-3, seed=0)
```
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy.special import expit

from sdernn import numcore as nc
from sdernn.config import IntegrationConfig
from sdernn.errors import DivergenceError, IntervalError, ShapeError, ValidationError
from sdernn.moments import GaussianState
from sdernn.numcore import Array, Matrix, Operand, Vector

logger = logging.getLogger(__name__)

Activation = Literal["tanh", "sigmoid", "identity"]

# value, derivative given the activation output
_ACTIVATIONS: Dict[str, Tuple[Callable[[Array], Array], Callable[[Array], Array]]] = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (expit, lambda y: y * (1.0 - y)),
    "identity": (lambda a: a, np.ones_like),
}

_TAPE_ACTIVATIONS: Dict[str, Callable[[Operand], Operand]] = {
    "tanh": nc.tanh,
    "sigmoid": nc.sigmoid,
    "identity": nc.identity,
}


@dataclass(frozen=True)
class MLP:
    """One-hidden-layer perceptron `act_out(W2 act_hidden(W1 h + b1) + b2)`."""

    W1: Operand  # noqa: N815
    b1: Operand
    W2: Operand  # noqa: N815
    b2: Operand
    hidden_activation: Activation = "tanh"
    output_activation: Activation = "identity"

    def __post_init__(self):
        w1, b1, w2, b2 = (nc.value_of(a) for a in (self.W1, self.b1, self.W2, self.b2))
        if w1.ndim != 2 or w2.ndim != 2 or w2.shape[1] != w1.shape[0]:
            raise ShapeError(f"mlp: layer shapes {w1.shape} and {w2.shape} do not chain")
        if b1.shape != (w1.shape[0],) or b2.shape != (w2.shape[0],):
            raise ShapeError(f"mlp: bias shapes {b1.shape}, {b2.shape} do not match layers")
        for act in (self.hidden_activation, self.output_activation):
            if act not in _ACTIVATIONS:
                raise ValidationError(f"mlp: unknown activation {act!r}")

    @property
    def input_size(self) -> int:
        """Input dimension."""
        return nc.value_of(self.W1).shape[1]

    @property
    def hidden_size(self) -> int:
        """Hidden units."""
        return nc.value_of(self.W1).shape[0]

    @property
    def output_size(self) -> int:
        """Output dimension."""
        return nc.value_of(self.W2).shape[0]

    def arrays(self) -> Dict[str, Operand]:
        """Trainable arrays by name."""
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_arrays(self, arrays: Dict[str, Operand]) -> "MLP":
        """Copy with the arrays replaced, keeping the activations."""
        return MLP(
            arrays["W1"],
            arrays["b1"],
            arrays["W2"],
            arrays["b2"],
            self.hidden_activation,
            self.output_activation,
        )

    def _check(self, h_size: int) -> None:
        if h_size != self.input_size:
            raise ShapeError(f"mlp: expected input size {self.input_size}, got {h_size}")

    def forward(self, h: Operand) -> Operand:
        """Evaluate on one input vector; tape-aware."""
        hv = nc.value_of(h)
        if hv.ndim != 1:
            raise ShapeError(f"mlp: expected a vector, got shape {hv.shape}")
        self._check(hv.shape[0])
        hidden = _TAPE_ACTIVATIONS[self.hidden_activation](nc.affine(self.W1, h, self.b1))
        return _TAPE_ACTIVATIONS[self.output_activation](nc.affine(self.W2, hidden, self.b2))

    def forward_batch(self, h: Array) -> Array:
        """Evaluate row-wise on an (n, input) batch; plain numpy."""
        self._check(h.shape[-1])
        w1, b1, w2, b2 = (nc.value_of(a) for a in (self.W1, self.b1, self.W2, self.b2))
        hidden = _ACTIVATIONS[self.hidden_activation][0](h @ w1.T + b1)
        return _ACTIVATIONS[self.output_activation][0](hidden @ w2.T + b2)

    def jacobian(self, h: Array) -> Matrix:
        """Analytic Jacobian of the output with respect to the input at `h`."""
        h = np.asarray(h, dtype=np.float64)
        self._check(h.shape[0])
        w1, b1, w2, b2 = (nc.value_of(a) for a in (self.W1, self.b1, self.W2, self.b2))
        act_h, dact_h = _ACTIVATIONS[self.hidden_activation]
        act_o, dact_o = _ACTIVATIONS[self.output_activation]
        hidden = act_h(w1 @ h + b1)
        out = act_o(w2 @ hidden + b2)
        return dact_o(out)[:, None] * (w2 @ (dact_h(hidden)[:, None] * w1))

    @classmethod
    def initialize(
        cls,
        input_size: int,
        hidden_size: int,
        output_size: int,
        rng: Optional[np.random.Generator] = None,
        hidden_activation: Activation = "tanh",
        output_activation: Activation = "identity",
    ) -> "MLP":
        """Per-layer uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        rng = rng if rng is not None else np.random.default_rng(0)
        b_in = 1.0 / math.sqrt(input_size)
        b_hid = 1.0 / math.sqrt(hidden_size)
        return cls(
            rng.uniform(-b_in, b_in, size=(hidden_size, input_size)),
            rng.uniform(-b_in, b_in, size=hidden_size),
            rng.uniform(-b_hid, b_hid, size=(output_size, hidden_size)),
            rng.uniform(-b_hid, b_hid, size=output_size),
            hidden_activation,
            output_activation,
        )

    @classmethod
    def linear(cls, a: Matrix) -> "MLP":
        """Exact embedding of `h -> A h`."""
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        return cls(a, np.zeros(n), np.eye(n), np.zeros(n), "identity", "identity")

    @classmethod
    def constant(cls, value, input_size: int) -> "MLP":
        """Exact embedding of `h -> value`."""
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        n = value.size
        return cls(
            np.zeros((1, input_size)),
            np.zeros(1),
            np.zeros((n, 1)),
            value,
            "identity",
            "identity",
        )


@dataclass(frozen=True)
class SdeParams:
    """Drift and diffusion networks plus the diagonal of the Brownian covariance Q."""

    drift_net: MLP
    diffusion_net: MLP
    q_diag: Vector

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q_diag, dtype=np.float64))
        m = self.drift_net.input_size
        if q.shape != (m,):
            raise ShapeError(f"q_diag: expected shape ({m},), got {q.shape}")
        if np.any(q < 0.0) or not np.all(np.isfinite(q)):
            raise ValidationError("q_diag: entries must be finite and nonnegative")
        for name, net in (("drift_net", self.drift_net), ("diffusion_net", self.diffusion_net)):
            if net.input_size != m or net.output_size != m:
                raise ShapeError(
                    f"{name}: expected {m} -> {m}, got {net.input_size} -> {net.output_size}"
                )
        object.__setattr__(self, "q_diag", q)

    @property
    def hidden_size(self) -> int:
        """State dimension m."""
        return self.drift_net.input_size

    @property
    def Q(self) -> Matrix:  # noqa: N802
        """Brownian covariance rate as a matrix."""
        return np.diag(self.q_diag)

    @classmethod
    def initialize(
        cls,
        hidden_size: int,
        drift_hidden: int = 100,
        diffusion_hidden: int = 100,
        q_diag: float = 1.0,
        rng: Optional[np.random.Generator] = None,
    ) -> "SdeParams":
        """Random drift (tanh, linear output) and diffusion (tanh, sigmoid output) nets."""
        rng = rng if rng is not None else np.random.default_rng(0)
        drift = MLP.initialize(hidden_size, drift_hidden, hidden_size, rng)
        diffusion = MLP.initialize(
            hidden_size, diffusion_hidden, hidden_size, rng, output_activation="sigmoid"
        )
        return cls(drift, diffusion, np.full(hidden_size, float(q_diag)))


def drift(params: SdeParams, h: Operand) -> Operand:
    """Drift f(h)."""
    nc.as_vector(nc.value_of(h), params.hidden_size, "h")
    return params.drift_net.forward(h)


def drift_jacobian(params: SdeParams, h) -> Matrix:
    """Analytic drift Jacobian F(h), (m, m)."""
    return params.drift_net.jacobian(nc.as_vector(nc.value_of(h), params.hidden_size, "h"))


def diffusion(params: SdeParams, h) -> Vector:
    """Diagonal of the diffusion g(h)."""
    h = nc.as_vector(nc.value_of(h), params.hidden_size, "h")
    return nc.value_of(params.diffusion_net.forward(h))


def step_sizes(t0: float, t1: float, dt: float) -> List[float]:
    """Fixed steps of `dt` covering [t0, t1], the last one shortened to land on t1."""
    if not t1 > t0:
        raise IntervalError(t0, t1)
    span = t1 - t0
    n_full = int(math.floor(span / dt * (1.0 + 1e-12)))
    steps = [dt] * n_full
    rest = span - n_full * dt
    if rest > span * 1e-12:
        steps.append(rest)
    if not steps:
        steps = [span]
    return steps


def _resolve_dt(cfg: IntegrationConfig, t0: float, t1: float) -> float:
    return cfg.dt if cfg.dt is not None else (t1 - t0) / 10.0


def _moment_rates(params: SdeParams, m: Vector, p: Matrix) -> Tuple[Vector, Matrix]:
    f = nc.value_of(params.drift_net.forward(m))
    jac = params.drift_net.jacobian(m)
    g = nc.value_of(params.diffusion_net.forward(m))
    return f, p @ jac.T + jac @ p + (g * params.q_diag * g) * np.eye(m.size)


def propagate_moments(
    params: SdeParams,
    state: GaussianState,
    t0: float,
    t1: float,
    cfg: Optional[IntegrationConfig] = None,
) -> GaussianState:
    """Integrate the linearized mean and covariance ODEs from t0 to t1.

    Args:
        params: drift, diffusion and Q.
        state: moments at t0.
        t0: start time, record units.
        t1: end time, record units; must exceed t0.
        cfg: step size, scheme and time scale. `dt=None` takes ten steps.

    Returns:
        Moments at t1 with a symmetric PSD covariance.
    """
    cfg = cfg or IntegrationConfig()
    if state.size != params.hidden_size:
        raise ShapeError(f"state: expected size {params.hidden_size}, got {state.size}")
    steps = step_sizes(t0, t1, _resolve_dt(cfg, t0, t1))
    m, p = state.mean.copy(), state.cov.copy()
    eye = np.eye(m.size)
    noise_rate = params.q_diag

    for k, h in enumerate(steps):
        h = h * cfg.time_scale
        if cfg.method == "euler":
            f = nc.value_of(params.drift_net.forward(m))
            phi = eye + params.drift_net.jacobian(m) * h
            g = nc.value_of(params.diffusion_net.forward(m))
            m = m + f * h
            p = phi @ p @ phi.T + np.diag(g * noise_rate * g) * h
        else:
            k1m, k1p = _moment_rates(params, m, p)
            k2m, k2p = _moment_rates(params, m + 0.5 * h * k1m, p + 0.5 * h * k1p)
            k3m, k3p = _moment_rates(params, m + 0.5 * h * k2m, p + 0.5 * h * k2p)
            k4m, k4p = _moment_rates(params, m + h * k3m, p + h * k3p)
            m = m + h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
            p = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        p = nc.symmetrize(p)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(p))):
            logger.error("moment integration diverged at step %d of %d", k, len(steps))
            raise DivergenceError(f"moment integration diverged at step {k}", step=k)

    logger.debug("propagated moments over [%g, %g] in %d steps", t0, t1, len(steps))
    return GaussianState(m, nc.clamp_psd(p))


def integrate_mean(
    params: SdeParams,
    m: Operand,
    t0: float,
    t1: float,
    cfg: Optional[IntegrationConfig] = None,
) -> Operand:
    """Integrate dm/dt = f(m) alone, recording on the tape when `m` or the drift are tracked."""
    cfg = cfg or IntegrationConfig()
    steps = step_sizes(t0, t1, _resolve_dt(cfg, t0, t1))
    f = params.drift_net.forward
    for h in steps:
        h = h * cfg.time_scale
        if cfg.method == "euler":
            m = nc.add(m, nc.scale(f(m), h))
            continue
        k1 = f(m)
        k2 = f(nc.add(m, nc.scale(k1, 0.5 * h)))
        k3 = f(nc.add(m, nc.scale(k2, 0.5 * h)))
        k4 = f(nc.add(m, nc.scale(k3, h)))
        incr = nc.add(nc.add(k1, nc.scale(k2, 2.0)), nc.add(nc.scale(k3, 2.0), k4))
        m = nc.add(m, nc.scale(incr, h / 6.0))
    return m


@dataclass(frozen=True)
class PathStatistics:
    """Ensemble statistics at the end of an Euler-Maruyama run."""

    mean: Vector
    cov: Matrix
    n_paths: int


def sample_paths(
    params: SdeParams,
    h0,
    t0: float,
    t1: float,
    n_paths: int,
    dt: float,
    seed: int,
    shard_size: int = 20_000,
    time_scale: float = 1.0,
) -> PathStatistics:
    """Euler-Maruyama ensemble of the SDE started at `h0`.

    Paths are simulated in shards of `shard_size`, each with its own stream spawned from
    `seed`; shard sums are merged in shard order so the result does not depend on sharding
    beyond the stream assignment.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths}")
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    if shard_size < 1:
        raise ValidationError(f"shard_size must be >= 1, got {shard_size}")
    m = params.hidden_size
    h0 = nc.as_vector(h0, m, "h0")
    steps = [h * time_scale for h in step_sizes(t0, t1, dt)]
    n_shards = -(-n_paths // shard_size)
    streams = np.random.SeedSequence(seed).spawn(n_shards)

    total = np.zeros(m)
    total_outer = np.zeros((m, m))
    for shard, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        n = min(shard_size, n_paths - shard * shard_size)
        h = np.tile(h0, (n, 1))
        for k, step in enumerate(steps):
            d_b = rng.standard_normal((n, m)) * np.sqrt(params.q_diag * step)
            f = params.drift_net.forward_batch(h)
            g = params.diffusion_net.forward_batch(h)
            h = h + f * step + g * d_b
            if not np.all(np.isfinite(h)):
                raise DivergenceError(f"path simulation diverged at step {k}", step=k)
        total += h.sum(axis=0)
        total_outer += h.T @ h

    mean = total / n_paths
    if n_paths > 1:
        cov = (total_outer - n_paths * np.outer(mean, mean)) / (n_paths - 1)
    else:
        cov = np.zeros((m, m))
    return PathStatistics(mean, nc.symmetrize(cov), n_paths)
