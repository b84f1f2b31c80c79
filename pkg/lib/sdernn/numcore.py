# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

"""## Overview.

Dense float64 linear algebra and a minimal reverse-mode differentiation tape.

Vectors are 1-D and matrices 2-D `numpy` arrays of dtype float64. The operations in this module
accept either plain arrays or `Var` handles; as soon as one operand is a `Var` the result is
recorded on that operand's `Tape`, otherwise the plain array is returned. This lets the GRU, the
drift network and the output head be written once and serve both the analytic inference path
and the training path.

```python
tape = Tape()
w = tape.variable(np.array([0.0]))
loss = sum_all(hadamard(sigmoid(w), sigmoid(w)))
grads = backward(tape, loss)
grads[w]  # array([0.25])
```

The tape is a Wengert list: nodes are appended in evaluation order, so every node's parents
precede it and a single reverse sweep visits each node once.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from sdernn.errors import ContractError, DivergenceError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
Matrix = Array
Vector = Array

# Eigenvalues above this are treated as numerically zero when checking PSD-ness.
PSD_TOLERANCE = 1e-9


class Var:
    """Handle to a value recorded on a `Tape`."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: Array):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the recorded value."""
        return self.value.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions of the recorded value."""
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(index={self.index}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


Operand = Union[Var, Array, float]
VJP = Callable[[Array], Array]


@dataclass
class _Node:
    parents: Tuple[int, ...]
    vjps: Tuple[VJP, ...]


class Gradients:
    """Gradients of a scalar loss, indexed by the `Var` they belong to."""

    def __init__(self, adjoints: Dict[int, Array], tape: "Tape"):
        self._adjoints = adjoints
        self._tape = tape

    def __getitem__(self, var: Var) -> Array:
        if var.tape is not self._tape:
            raise ContractError("variable belongs to a different tape")
        grad = self._adjoints.get(var.index)
        if grad is None:
            return np.zeros_like(var.value)
        return grad

    def __contains__(self, var: Var) -> bool:
        return var.tape is self._tape and var.index in self._adjoints


class Tape:
    """Ordered record of primitive operations for reverse-mode differentiation.

    A tape has a single owner and is not thread-safe; parallel work uses one tape per worker.
    """

    def __init__(self):
        self._nodes: List[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value) -> Var:
        """Register a leaf (a tracked parameter or input)."""
        array = np.array(value, dtype=np.float64)
        _check_finite(array, "variable")
        return self._append(array, (), ())

    def record(self, value: Array, parents: Sequence[Var], vjps: Sequence[VJP]) -> Var:
        """Append a node computed from `parents` with the given vector-Jacobian products."""
        for parent in parents:
            if parent.tape is not self:
                raise ContractError("cannot mix variables from different tapes")
        return self._append(value, tuple(p.index for p in parents), tuple(vjps))

    def _append(self, value: Array, parents: Tuple[int, ...], vjps: Tuple[VJP, ...]) -> Var:
        self._nodes.append(_Node(parents, vjps))
        return Var(self, len(self._nodes) - 1, value)

    def backward(self, loss: Var) -> Gradients:
        """Propagate d(loss)/d(node) from `loss` back to every node it depends on."""
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")

        adjoints: Dict[int, Array] = {loss.index: np.ones_like(loss.value)}
        for index in range(loss.index, -1, -1):
            adjoint = adjoints.get(index)
            if adjoint is None:
                continue
            node = self._nodes[index]
            for parent, vjp in zip(node.parents, node.vjps):
                contribution = vjp(adjoint)
                if parent in adjoints:
                    adjoints[parent] = adjoints[parent] + contribution
                else:
                    adjoints[parent] = contribution
        return Gradients(adjoints, self)


def backward(tape: Tape, loss: Var) -> Gradients:
    """Reverse sweep over `tape` from the scalar node `loss`."""
    return tape.backward(loss)


def value_of(x: Operand) -> Array:
    """Return the numerical value of an operand."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def stop_gradient(x: Operand) -> Array:
    """Return the value of `x` detached from any tape."""
    return np.array(value_of(x), copy=True)


def _check_finite(value: Array, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite result in {op}")


def _emit(value: Array, op: str, operands: Sequence[Operand], vjps: Sequence[VJP]) -> Operand:
    _check_finite(value, op)
    tracked = [(x, vjp) for x, vjp in zip(operands, vjps) if isinstance(x, Var)]
    if not tracked:
        return value
    tape = tracked[0][0].tape
    return tape.record(value, [x for x, _ in tracked], [vjp for _, vjp in tracked])


def _same_shape(op: str, a: Array, b: Array) -> None:
    if a.ndim and b.ndim and a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(grad: Array, like: Array) -> Array:
    # Scalars combined with arrays receive the summed adjoint.
    if like.ndim == 0 and grad.ndim:
        return np.asarray(grad.sum())
    return grad


def matmul(a: Operand, b: Operand) -> Operand:
    """Matrix product `a @ b`; `b` may be a vector."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    out = av @ bv

    def vjp_a(g: Array) -> Array:
        return np.outer(g, bv) if bv.ndim == 1 else g @ bv.T

    def vjp_b(g: Array) -> Array:
        return av.T @ g

    return _emit(out, "matmul", (a, b), (vjp_a, vjp_b))


def add(a: Operand, b: Operand) -> Operand:
    """Elementwise sum."""
    av, bv = value_of(a), value_of(b)
    _same_shape("add", av, bv)
    return _emit(
        av + bv,
        "add",
        (a, b),
        (lambda g: _unbroadcast(g, av), lambda g: _unbroadcast(g, bv)),
    )


def sub(a: Operand, b: Operand) -> Operand:
    """Elementwise difference."""
    av, bv = value_of(a), value_of(b)
    _same_shape("sub", av, bv)
    return _emit(
        av - bv,
        "sub",
        (a, b),
        (lambda g: _unbroadcast(g, av), lambda g: -_unbroadcast(g, bv)),
    )


def hadamard(a: Operand, b: Operand) -> Operand:
    """Elementwise product."""
    av, bv = value_of(a), value_of(b)
    _same_shape("hadamard", av, bv)
    return _emit(
        av * bv,
        "hadamard",
        (a, b),
        (lambda g: _unbroadcast(g * bv, av), lambda g: _unbroadcast(g * av, bv)),
    )


def scale(a: Operand, factor: float) -> Operand:
    """Multiply by a constant."""
    av = value_of(a)
    return _emit(av * factor, "scale", (a,), (lambda g: g * factor,))


def tanh(a: Operand) -> Operand:
    """Hyperbolic tangent."""
    y = np.tanh(value_of(a))
    return _emit(y, "tanh", (a,), (lambda g: g * (1.0 - y * y),))


def sigmoid(a: Operand) -> Operand:
    """Logistic sigmoid 1/(1+exp(-x)), saturating without overflow."""
    y = expit(value_of(a))
    return _emit(y, "sigmoid", (a,), (lambda g: g * y * (1.0 - y),))


def identity(a: Operand) -> Operand:
    """Return `a` unchanged."""
    return a


def affine(w: Operand, x: Operand, b: Operand) -> Operand:
    """Fused `w @ x + b` for a vector `x`."""
    wv, xv, bv = value_of(w), value_of(x), value_of(b)
    if wv.ndim != 2 or xv.ndim != 1 or wv.shape[1] != xv.shape[0]:
        raise ShapeError(f"affine: cannot multiply {wv.shape} by {xv.shape}")
    if bv.shape != (wv.shape[0],):
        raise ShapeError(f"affine: bias shape {bv.shape} does not match {wv.shape[0]} rows")
    out = wv @ xv + bv
    return _emit(
        out,
        "affine",
        (w, x, b),
        (lambda g: np.outer(g, xv), lambda g: wv.T @ g, lambda g: g),
    )


def sum_all(a: Operand) -> Operand:
    """Sum of all entries, as a 0-d value."""
    av = value_of(a)
    return _emit(np.asarray(av.sum()), "sum", (a,), (lambda g: np.full_like(av, float(g)),))


_ELEMENTWISE: Dict[str, Callable[..., Operand]] = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "hadamard": hadamard,
    "add": add,
    "sub": sub,
    "scale": scale,
}


def elementwise(op: str, *args) -> Operand:
    """Dispatch an elementwise operation by name.

    Args:
        op: one of `tanh`, `sigmoid`, `hadamard`, `add`, `sub`, `scale`.
        args: operands; `scale` takes an operand and a float factor.
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def as_vector(x, size: int, name: str = "vector") -> Vector:
    """Coerce to a finite float64 vector of the given length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (size,):
        raise ShapeError(f"{name}: expected shape ({size},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name}: entries must be finite")
    return v


def as_matrix(x, rows: int, cols: int, name: str = "matrix") -> Matrix:
    """Coerce to a finite float64 matrix of the given shape."""
    m = np.asarray(x, dtype=np.float64)
    if m.shape != (rows, cols):
        raise ShapeError(f"{name}: expected shape ({rows}, {cols}), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name}: entries must be finite")
    return m


def symmetrize(p: Matrix) -> Matrix:
    """Return (P + P^T) / 2."""
    return 0.5 * (p + p.T)


def min_eigenvalue(p: Matrix) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    if p.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(p))[0])


def clamp_psd(p: Matrix, tolerance: float = PSD_TOLERANCE) -> Matrix:
    """Symmetrize `p` and, if its spectrum dips below `-tolerance`, zero the negative part."""
    p = symmetrize(p)
    if p.size == 0:
        return p
    eigvals, eigvecs = np.linalg.eigh(p)
    if eigvals[0] >= -tolerance:
        return p
    logger.debug("clamping covariance eigenvalue %.3g to zero", eigvals[0])
    eigvals = np.clip(eigvals, 0.0, None)
    return symmetrize((eigvecs * eigvals) @ eigvecs.T)
