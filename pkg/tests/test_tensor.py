"""Tape, primitives and the finite-difference checker."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperconv_kit import tensor as T
from hyperconv_kit.image_ops import sigmoid
from hyperconv_kit.tensor import ShapeError, Tape, TapeError, Tensor, backward, finite_difference_check


def weighted(fn, shape_seed=0):
    """Scalarize ``fn``'s output with fixed random weights so no gradient entry is trivially zero."""
    def f(x):
        y = fn(x)
        w = np.random.default_rng(shape_seed).uniform(0.5, 1.5, y.shape)
        return (y * w).sum()
    return f


class TestForward:
    def test_sum_of_ones(self):
        assert T.sum(Tensor(np.ones((2, 2)))).item() == 4.0

    def test_reshape_roundtrip(self, rng):
        x = rng.standard_normal((2, 3))
        y = T.reshape(T.reshape(Tensor(x), (3, 2)), (2, 3))
        np.testing.assert_array_equal(y.data, x)

    def test_matmul_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(np.eye(2))).data, a)

    def test_mean_keepdims(self, rng):
        x = rng.standard_normal((2, 3, 4))
        y = T.mean(Tensor(x), axis=(1, 2), keepdims=True)
        np.testing.assert_allclose(y.data, x.mean(axis=(1, 2), keepdims=True))

    def test_concat_and_slice(self, rng):
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        c = T.concat([Tensor(a), Tensor(b)], axis=0)
        np.testing.assert_array_equal(c[2:].data, b)

    def test_clamp_values(self):
        y = T.clamp(Tensor(np.array([-2.0, 0.3, 5.0])), 0.0, 1.0)
        np.testing.assert_array_equal(y.data, [0.0, 0.3, 1.0])

    def test_tensor_is_read_only(self):
        t = Tensor(np.zeros(3))
        with pytest.raises(ValueError):
            t.data[0] = 1.0

    def test_integer_input_promoted_to_float(self):
        assert Tensor(np.arange(3)).dtype == np.float64


class TestErrors:
    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div])
    def test_binary_shape_mismatch_names_op_and_shapes(self, op):
        with pytest.raises(ShapeError, match=rf"{op.__name__}.*\(2, 3\).*\(4,\)"):
            op(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_reshape_mismatch(self):
        with pytest.raises(ShapeError, match="reshape"):
            T.reshape(Tensor(np.ones(6)), (4, 2))

    def test_bad_reduction_axis(self):
        with pytest.raises(ShapeError, match="axis"):
            T.sum(Tensor(np.ones((2, 2))), axis=3)

    def test_loss_not_scalar(self):
        tape = Tape()
        x = tape.leaf(np.ones(3))
        with pytest.raises(TapeError, match="scalar"):
            backward(tape, x * 2.0)

    def test_loss_not_on_tape(self):
        tape, other = Tape(), Tape()
        x = other.leaf(np.ones(3))
        with pytest.raises(TapeError, match="not produced on this tape"):
            backward(tape, x.sum())

    def test_mixed_tapes(self):
        a, b = Tape().leaf(np.ones(2)), Tape().leaf(np.ones(2))
        with pytest.raises(TapeError, match="different tapes"):
            a + b

    def test_fd_check_requires_scalar(self):
        with pytest.raises(ShapeError, match="scalar"):
            finite_difference_check(lambda x: x * 2.0, np.ones(3))


class TestBackward:
    def test_square_derivative(self):
        tape = Tape()
        x = tape.leaf(np.array(3.0))
        g = backward(tape, x * x)
        assert g[x].item() == 6.0

    def test_sum_gradient_is_ones(self, rng):
        tape = Tape()
        x = tape.leaf(rng.standard_normal((3, 4)))
        np.testing.assert_array_equal(backward(tape, x.sum())[x].data, np.ones((3, 4)))

    def test_matmul_chain_against_fd(self, rng):
        b, c = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
        err = finite_difference_check(weighted(lambda x: T.matmul(T.matmul(x, b), c)), rng.standard_normal((4, 4)))
        assert err < 1e-6

    def test_unused_leaf_gets_zeros(self):
        tape = Tape()
        x, y = tape.leaf(np.ones(2), name="x"), tape.leaf(np.ones(3), name="y")
        g = backward(tape, (x * 2.0).sum())
        np.testing.assert_array_equal(g["y"].data, np.zeros(3))
        assert set(g.by_name()) == {"x", "y"}

    def test_shared_subexpression_accumulates(self):
        tape = Tape()
        x = tape.leaf(np.array(2.0))
        y = x * x
        g = backward(tape, y + y)
        assert g[x].item() == 8.0

    def test_tape_is_topologically_ordered(self, rng):
        tape = Tape()
        x = tape.leaf(rng.standard_normal(3))
        y = T.exp(x) * x + 1.0
        for i, parents in enumerate(tape._parents):
            assert all(p is None or p < i for p in parents)
        assert y.node == len(tape) - 1

    def test_deterministic(self, rng):
        x0 = rng.standard_normal((5, 5))

        def run():
            tape = Tape()
            x = tape.leaf(x0)
            loss = T.sum(T.exp(T.matmul(x, x)) * 1e-3)
            return loss.item(), backward(tape, loss)[x].data

        (l1, g1), (l2, g2) = run(), run()
        assert l1 == l2
        np.testing.assert_array_equal(g1, g2)


class TestFiniteDifferenceCheck:
    def test_half_squared_norm(self, rng):
        assert finite_difference_check(lambda x: 0.5 * (x * x).sum(), rng.standard_normal(6)) < 1e-8

    def test_sum_sigmoid(self, rng):
        assert finite_difference_check(lambda x: sigmoid(x).sum(), rng.standard_normal(6)) < 1e-6

    def test_constant_function(self):
        assert finite_difference_check(lambda x: Tensor(np.array(3.0)), np.ones(4)) == 0.0

    def test_index_subset(self, rng):
        x = rng.standard_normal((10, 10))
        err = finite_difference_check(lambda t: (t * t * t).sum(), x, indices=[(0, 0), (9, 9)])
        assert err < 1e-6


def _away_from(x, kinks, gap=1e-3):
    for k in kinks:
        x = np.where(np.abs(x - k) < gap, k + 2 * gap * np.sign(x - k + 1e-30), x)
    return x


PRIMITIVES = {
    "add": lambda x: T.add(x, x * 0.5),
    "add_broadcast": lambda x: T.add(x, T.sum(x, axis=0, keepdims=True)),
    "sub": lambda x: T.sub(x * 3.0, T.exp(x)),
    "mul": lambda x: T.mul(x, T.exp(x)),
    "div": lambda x: T.div(x, T.exp(x) + 1.0),
    "div_eps": lambda x: T.div(x, T.exp(x), eps=0.1),
    "neg": lambda x: T.neg(x),
    "abs": lambda x: T.abs(x),
    "exp": lambda x: T.exp(x),
    "log": lambda x: T.log(T.exp(x) + 1.0),
    "sqrt": lambda x: T.sqrt(x * x + 1.0),
    "power": lambda x: T.power(x * x + 1.0, 0.3),
    "clamp": lambda x: T.clamp(x, -0.5, 0.5),
    "sum_axis": lambda x: T.sum(x * x, axis=1),
    "mean_keepdims": lambda x: T.mean(x * x, axis=0, keepdims=True),
    "reshape": lambda x: T.reshape(x * x, (12,)),
    "transpose": lambda x: T.transpose(x * x),
    "broadcast_to": lambda x: T.broadcast_to(T.reshape(x * x, (1, 3, 4)), (2, 3, 4)),
    "concat": lambda x: T.concat([x, x * x], axis=1),
    "slice": lambda x: x[1:, ::2] * x[1:, 1::2],
    "matmul": lambda x: T.matmul(x, T.transpose(x)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(5))
def test_primitive_gradients(name, seed):
    x = np.random.default_rng(seed).standard_normal((3, 4))
    x = _away_from(x, (-0.5, 0.0, 0.5))
    assert finite_difference_check(weighted(PRIMITIVES[name], seed), x) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.data())
def test_broadcast_gradient_is_sum_over_broadcast_axes(shape, data):
    mask = data.draw(st.lists(st.booleans(), min_size=len(shape), max_size=len(shape)))
    small = tuple(1 if m else n for n, m in zip(shape, mask))
    rng = np.random.default_rng(len(shape))
    g_out = rng.standard_normal(shape)
    tape = Tape()
    x = tape.leaf(rng.standard_normal(small))
    g = backward(tape, (T.broadcast_to(x, shape) * g_out).sum())[x].data
    axes = tuple(i for i, m in enumerate(mask) if m)
    np.testing.assert_allclose(g, g_out.sum(axis=axes, keepdims=True), rtol=1e-12, atol=1e-12)
