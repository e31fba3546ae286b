"""
Tests for the autodiff core: forward values, gradient accumulation, the
graph switch and analytic gradients against central differences.
"""

import numpy as np
import pytest

from ktnet import tensor as T
from ktnet.errors import GradientError, NonFiniteError, ShapeError
from ktnet.tensor import Tensor, no_grad

from .conftest import numeric_grad


# =============================================================================
# Construction
# =============================================================================


class TestTensor:
    """Leaf construction and basic properties."""

    def test_data_is_float64(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,)

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_item_needs_single_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_operators(self):
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 5.0])
        np.testing.assert_array_equal((a + b).data, [4.0, 7.0])
        np.testing.assert_array_equal((a - b).data, [-2.0, -3.0])
        np.testing.assert_array_equal((a * b).data, [3.0, 10.0])
        np.testing.assert_array_equal((-a).data, [-1.0, -2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones(2)), Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# =============================================================================
# Graph recording
# =============================================================================


class TestBackward:
    """Tape replay and gradient bookkeeping."""

    def test_shared_input_accumulates(self):
        """x*x + x has gradient 2x + 1."""
        x = T.parameter([1.5, -2.0])
        loss = T.reduce_sum(T.add(T.mul(x, x), x))
        T.backward(loss)
        np.testing.assert_allclose(x.grad, [4.0, -3.0])

    def test_gradients_accumulate_across_calls(self):
        x = T.parameter([1.0])
        T.backward(T.reduce_sum(T.scale(x, 3.0)))
        T.backward(T.reduce_sum(T.scale(x, 3.0)))
        np.testing.assert_allclose(x.grad, [6.0])

    def test_non_scalar_loss(self):
        x = T.parameter([1.0, 2.0])
        with pytest.raises(GradientError):
            T.backward(T.scale(x, 2.0))

    def test_loss_without_parameters(self):
        with pytest.raises(GradientError):
            T.backward(T.reduce_sum(Tensor([1.0])))

    def test_each_node_visited_once(self):
        x = T.parameter(np.ones(3))
        y = T.relu(x)
        loss = T.reduce_sum(T.add(y, y))
        tape = T.backward(loss)
        assert tape.visits == len(tape.nodes)
        assert tape.leaves == [x]

    def test_no_grad_records_nothing(self):
        x = T.parameter([1.0])
        with no_grad():
            y = T.scale(x, 2.0)
        assert not y.requires_grad
        assert y.is_leaf
        assert T.is_grad_enabled()

    def test_constants_get_no_gradient(self):
        x = T.parameter([2.0])
        c = Tensor([3.0])
        T.backward(T.reduce_sum(T.mul(x, c)))
        assert c.grad is None
        np.testing.assert_allclose(x.grad, [3.0])


# =============================================================================
# Pointwise values
# =============================================================================


class TestActivations:
    """Forward values of the activations."""

    def test_leaky_relu(self):
        out = T.leaky_relu(Tensor([-1.0, 2.0]), 0.2)
        np.testing.assert_allclose(out.data, [-0.2, 2.0])

    def test_sigmoid_is_stable(self):
        out = T.sigmoid(Tensor([-800.0, 0.0, 800.0]))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0])

    def test_softmax_rows_sum_to_one(self):
        out = T.softmax(Tensor([[1.0, 2.0], [3.0, 1000.0]]), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), [1.0, 1.0])

    def test_log_softmax_matches_log_of_softmax(self):
        x = Tensor([[0.3, -1.2, 2.0]])
        np.testing.assert_allclose(
            T.log_softmax(x, axis=1).data, np.log(T.softmax(x, axis=1).data)
        )

    def test_softmax_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor([1.0]), axis=2)

    def test_sqrt_of_negative(self):
        with pytest.raises(NonFiniteError):
            T.sqrt(Tensor([-1.0]))

    def test_reciprocal_of_zero(self):
        with pytest.raises(NonFiniteError):
            T.reciprocal(Tensor([0.0, 1.0]))

    def test_activation_dispatch(self):
        x = Tensor([-2.0, 3.0])
        np.testing.assert_array_equal(T.activation(x, "relu").data, [0.0, 3.0])
        with pytest.raises(ValueError):
            T.activation(x, "gelu")


# =============================================================================
# Gradients against central differences
# =============================================================================


def _check(build, *inputs, atol=1e-6):
    """Compare analytic gradients of sum(w * build(*inputs)) with finite differences."""
    rng = np.random.default_rng(7)
    out_shape = build(*inputs).shape
    weights = Tensor(rng.normal(size=out_shape))

    def value() -> float:
        with no_grad():
            return float(np.sum(weights.data * build(*inputs).data))

    for x in inputs:
        x.zero_grad()
    T.backward(T.reduce_sum(T.mul(weights, build(*inputs))))
    for x in inputs:
        np.testing.assert_allclose(x.grad, numeric_grad(value, x), atol=atol, rtol=1e-5)


class TestGradients:
    """Analytic gradient of every differentiable operation."""

    @pytest.fixture
    def a(self, rng):
        return T.parameter(rng.normal(size=(3, 4)))

    @pytest.fixture
    def b(self, rng):
        return T.parameter(rng.normal(size=(3, 4)) + 0.1)

    def test_arithmetic(self, a, b):
        _check(lambda x, y: T.sub(T.mul(x, y), T.add(x, y)), a, b)

    def test_matmul(self, rng):
        a = T.parameter(rng.normal(size=(2, 3)))
        b = T.parameter(rng.normal(size=(3, 4)))
        _check(T.matmul, a, b)

    def test_shape_ops(self, a):
        _check(lambda x: T.transpose(T.reshape(x, (2, 6)), (1, 0)), a)

    def test_expand(self, rng):
        x = T.parameter(rng.normal(size=(3, 1)))
        _check(lambda t: T.expand(t, (2, 3, 4)), x)

    def test_take_with_repeats(self, a):
        rows = np.array([0, 2, 2, 1])
        cols = np.array([1, 1, 1, 3])
        _check(lambda x: T.take(x, (rows, cols)), a)

    def test_concat_and_split(self, a, b):
        _check(lambda x, y: T.split(T.concat([x, y], axis=1), [3, 5], axis=1)[1], a, b)

    def test_reductions(self, a):
        _check(lambda x: T.reduce_sum(x, axis=0, keepdims=True), a)
        _check(lambda x: T.reduce_mean(x, axis=1), a)

    def test_smooth_activations(self, a):
        _check(T.sigmoid, a)
        _check(lambda x: T.softmax(x, axis=1), a)
        _check(lambda x: T.log_softmax(x, axis=0), a)

    def test_piecewise_activations(self, rng):
        # keep away from the kink at zero
        data = rng.normal(size=(3, 4))
        data = np.where(np.abs(data) < 0.1, 0.5, data)
        x = T.parameter(data)
        _check(T.relu, x)
        _check(lambda t: T.leaky_relu(t, 0.2), x)

    def test_sqrt_and_reciprocal(self, rng):
        x = T.parameter(rng.uniform(0.5, 2.0, size=(5,)))
        _check(T.sqrt, x)
        _check(T.reciprocal, x)

    def test_add_n_and_scale(self, a, b):
        _check(lambda x, y: T.shift(T.scale(T.add_n([x, y, x]), 0.5), 1.0), a, b)
