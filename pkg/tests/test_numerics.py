import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shortlex import numerics as nx


def test_matmul_examples():
    np.testing.assert_array_equal(nx.matmul(np.eye(2), np.array([[5.0], [7.0]])), [[5], [7]])
    np.testing.assert_array_equal(nx.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])), [[11]])
    np.testing.assert_array_equal(nx.matmul(np.zeros((1, 2)), np.array([[3.0], [4.0]])), [[0]])


def test_matmul_shape_error():
    with pytest.raises(nx.ShapeError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(np.zeros(2)), [0.5, 0.5])
    e2 = math.exp(2)
    np.testing.assert_allclose(nx.softmax(np.array([1.0, 3.0])), [1 / (1 + e2), e2 / (1 + e2)], rtol=1e-12)
    out = nx.softmax(np.array([1000.0, 0.0]))
    assert np.isfinite(out).all() and out[0] == pytest.approx(1.0)


def test_softmax_empty():
    with pytest.raises(nx.ShapeError):
        nx.softmax(np.array([]))


def test_softmax_sums_to_one_long_vectors():
    rng = np.random.default_rng(0)
    for n in (1, 10, 1000, 100_000):
        assert abs(nx.softmax(rng.uniform(-30, 30, n)).sum() - 1.0) < 1e-6


def test_sigmoid_examples():
    assert nx.sigmoid(np.array(0.0)) == 0.5
    assert nx.sigmoid(np.array(-50.0)) > 0
    assert nx.sigmoid(np.array(math.log(3))) == pytest.approx(0.75, abs=1e-15)


def test_sigmoid_and_log_sigmoid_finite_on_wide_range():
    x = np.linspace(-500, 500, 10001)
    assert np.isfinite(nx.sigmoid(x)).all()
    ls = nx.log_sigmoid(x)
    assert np.isfinite(ls).all()
    assert np.isfinite(nx.log_sigmoid(-x)).all()
    # log sigmoid(-500) = -500 - log1p(e^-500)
    assert ls[0] == pytest.approx(-500.0)


def test_maxpool_examples():
    np.testing.assert_array_equal(nx.maxpool_cols(np.array([[0.1, 0.9], [0.5, 0.2]])), [0.9, 0.5])
    col = np.array([[1.0], [-2.0]])
    np.testing.assert_array_equal(nx.maxpool_cols(col), [1.0, -2.0])
    np.testing.assert_array_equal(nx.maxpool_cols(np.array([[0.1, 0.9]]), [False, True]), [0.1])


def test_maxpool_all_masked():
    with pytest.raises(ValueError):
        nx.maxpool_cols(np.ones((2, 2)), [True, True])


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-100, 100)),
    arrays(np.float64, (3, 2), elements=st.floats(-100, 100)),
)
def test_maxpool_concat_is_elementwise_max(a, b):
    both = nx.maxpool_cols(np.concatenate([a, b], axis=1))
    np.testing.assert_array_equal(both, np.maximum(nx.maxpool_cols(a), nx.maxpool_cols(b)))


def test_finite_diff_examples():
    g = nx.finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), h=1e-3)
    assert g[0] == pytest.approx(6.0, abs=1e-6)
    np.testing.assert_array_equal(nx.finite_diff_grad(lambda x: 4.0, np.zeros(3)), np.zeros(3))


def test_finite_diff_non_finite():
    with pytest.raises(nx.NumericError):
        nx.finite_diff_grad(lambda x: float("nan"), np.zeros(2))
    with pytest.raises(ValueError):
        nx.finite_diff_grad(lambda x: 0.0, np.zeros(2), h=0)


def _check_op(build, *shapes, seed=0):
    """Tape gradient of sum(w * op(...)) against central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=s) for s in shapes]
    w = None

    def f(*vals):
        nonlocal w
        out = build(*vals)
        if w is None:
            w = np.random.default_rng(seed + 1).normal(size=np.shape(nx.value(out)))
        return nx.sum_all(nx.mul(out, w))

    f(*xs)
    tape = nx.Tape()
    vs = [tape.param(x, f"x{i}") for i, x in enumerate(xs)]
    grads = tape.backward(f(*vs))
    for i, x in enumerate(xs):
        def fi(xi, i=i):
            args = list(xs)
            args[i] = xi
            return float(f(*args))

        fd = nx.finite_diff_grad(fi, x.copy())
        assert nx.relative_error(grads[f"x{i}"], fd) < 1e-6


@pytest.mark.parametrize(
    "build,shapes",
    [
        (lambda a, b: nx.matmul(a, b), [(3, 4), (4, 2)]),
        (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (4, 5)]),
        (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
        (lambda a: nx.softmax(a, axis=-1), [(3, 5)]),
        (lambda a: nx.log_softmax(a, axis=-1), [(3, 5)]),
        (lambda a: nx.sigmoid(a), [(4,)]),
        (lambda a: nx.log_sigmoid(a), [(4,)]),
        (lambda a, g, b: nx.layer_norm(a, g, b), [(2, 3, 6), (6,), (6,)]),
        (lambda a: nx.transpose(nx.reshape(a, (2, 3, 2)), (2, 0, 1)), [(12,)]),
        (lambda a, b: nx.add(nx.mul(a, b), nx.sub(a, b)), [(3, 1), (1, 4)]),
        (lambda a: nx.sum_all(a, axis=1), [(3, 4)]),
        (lambda a: nx.masked_max(a, np.array([[True], [False], [True]]), axis=0), [(3, 4)]),
    ],
)
def test_op_gradients(build, shapes):
    _check_op(build, *shapes)


def test_take_rows_scatter_add():
    tape = nx.Tape()
    table = tape.param(np.arange(6.0).reshape(3, 2), "t")
    out = nx.take_rows(table, np.array([[0, 2], [2, 2]]))
    g = tape.backward(nx.sum_all(out))
    np.testing.assert_array_equal(g["t"], [[1, 1], [0, 0], [3, 3]])


def test_block_stops_gradient_and_records_it():
    tape = nx.Tape()
    x = tape.param(np.array([1.0, 2.0]), "x")
    y = nx.mul(x, 3.0)
    blocked = tape.block(y, "edge")
    loss = nx.sum_all(nx.mul(blocked, blocked))
    g = tape.backward(loss)
    assert np.all(g["x"] == 0.0)
    np.testing.assert_allclose(tape.blocked["edge"], [6.0, 12.0])


def test_unused_parameter_gets_zero_gradient():
    tape = nx.Tape()
    a = tape.param(np.ones(2), "a")
    tape.param(np.ones(3), "unused")
    g = tape.backward(nx.sum_all(a))
    np.testing.assert_array_equal(g["unused"], np.zeros(3))


def test_relative_error_metric():
    assert nx.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert nx.relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-3])) == pytest.approx(1e-3)
