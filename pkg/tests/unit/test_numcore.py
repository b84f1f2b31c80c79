# Copyright 2026 The sdernn Authors.
# See LICENSE file for licensing details.

import numpy as np
import pytest

from sdernn import numcore as nc
from sdernn.errors import ContractError, DivergenceError, ShapeError
from tests.oracles import finite_diff, naive_matmul, relative_error


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nc.matmul(np.eye(2), a), a)


def test_matmul_row_by_column():
    assert nc.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert relative_error(nc.matmul(a, b), naive_matmul(a, b)) < 1e-12


def test_matmul_associative():
    rng = np.random.default_rng(4)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    left = nc.matmul(nc.matmul(a, b), c)
    right = nc.matmul(a, nc.matmul(b, c))
    np.testing.assert_allclose(left, right, atol=1e-10)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError, match="cannot multiply"):
        nc.matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.mark.parametrize(
    "op, args, expected",
    [
        ("sigmoid", (np.array(0.0),), 0.5),
        ("tanh", (np.array(0.0),), 0.0),
        ("hadamard", (np.array([1.0, 2.0]), np.array([3.0, 4.0])), [3.0, 8.0]),
        ("add", (np.array([1.0, 2.0]), np.array([3.0, 4.0])), [4.0, 6.0]),
        ("sub", (np.array([1.0, 2.0]), np.array([3.0, 4.0])), [-2.0, -2.0]),
        ("scale", (np.array([1.0, 2.0]), 3.0), [3.0, 6.0]),
    ],
)
def test_elementwise(op, args, expected):
    np.testing.assert_allclose(nc.elementwise(op, *args), expected)


def test_elementwise_unknown_op():
    with pytest.raises(ContractError, match="unknown elementwise op"):
        nc.elementwise("relu", np.zeros(2))


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        nc.hadamard(np.ones(2), np.ones(3))


def test_saturating_activations_stay_finite():
    x = np.linspace(-50.0, 50.0, 101)
    assert np.all(np.isfinite(nc.sigmoid(x)))
    assert np.all(np.isfinite(nc.tanh(x)))
    assert nc.sigmoid(np.array(-50.0)) > 0.0


def test_non_finite_result_is_divergence():
    with pytest.raises(DivergenceError):
        nc.scale(np.array([1e308]), 10.0)


def test_backward_linear_map():
    tape = nc.Tape()
    x = np.array([1.0, -2.0, 3.0])
    w = tape.variable(np.zeros((2, 3)))
    loss = nc.sum_all(nc.matmul(w, x))
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[w], np.outer(np.ones(2), x))


def test_backward_sigmoid_squared():
    tape = nc.Tape()
    w = tape.variable(np.array([0.0]))
    loss = nc.sum_all(nc.hadamard(nc.sigmoid(w), nc.sigmoid(w)))
    grads = nc.backward(tape, loss)
    np.testing.assert_allclose(grads[w], [0.25])


def test_backward_requires_scalar_loss():
    tape = nc.Tape()
    w = tape.variable(np.ones(2))
    with pytest.raises(ContractError, match="scalar"):
        tape.backward(nc.tanh(w))


def test_mixing_tapes_is_rejected():
    a = nc.Tape().variable(np.ones(2))
    b = nc.Tape().variable(np.ones(2))
    with pytest.raises(ContractError, match="different tapes"):
        nc.add(a, b)


def test_unreached_variable_has_zero_gradient():
    tape = nc.Tape()
    used = tape.variable(np.ones(2))
    unused = tape.variable(np.ones((3, 3)))
    grads = tape.backward(nc.sum_all(nc.tanh(used)))
    np.testing.assert_array_equal(grads[unused], np.zeros((3, 3)))
    assert unused not in grads


def test_stop_gradient_detaches():
    tape = nc.Tape()
    w = tape.variable(np.array([0.3]))
    loss = nc.sum_all(nc.hadamard(w, nc.stop_gradient(w)))
    np.testing.assert_allclose(tape.backward(loss)[w], [0.3])


def _mlp_loss(w1, b1, w2, b2, x):
    hidden = nc.tanh(nc.affine(w1, x, b1))
    out = nc.sigmoid(nc.affine(w2, hidden, b2))
    return nc.sum_all(nc.hadamard(out, out))


@pytest.mark.parametrize("seed", range(100))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=shape) for shape in ((4, 3), (4,), (2, 4), (2,))]
    x = rng.normal(size=3)

    tape = nc.Tape()
    variables = [tape.variable(a) for a in arrays]
    grads = tape.backward(_mlp_loss(*variables, x))

    for index, (array, var) in enumerate(zip(arrays, variables)):

        def column_loss(flat, index=index, shape=array.shape):
            trial = list(arrays)
            trial[index] = flat.reshape(shape)
            return np.atleast_1d(_mlp_loss(*trial, x))

        numeric = finite_diff(column_loss, array.ravel()).reshape(array.shape)
        assert relative_error(grads[var], numeric, floor=1e-3) < 1e-5


def test_clamp_psd_zeroes_negative_spectrum():
    p = np.array([[1.0, 0.0], [0.0, -1e-3]])
    clamped = nc.clamp_psd(p)
    assert nc.min_eigenvalue(clamped) >= -nc.PSD_TOLERANCE
    np.testing.assert_allclose(clamped, np.diag([1.0, 0.0]), atol=1e-15)


def test_clamp_psd_leaves_psd_matrix_alone():
    p = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_array_equal(nc.clamp_psd(p), p)


@pytest.mark.parametrize(
    "value, size",
    [(np.ones(3), 2), (np.array([1.0, np.nan]), 2)],
)
def test_as_vector_rejects(value, size):
    with pytest.raises(ValueError):
        nc.as_vector(value, size)
