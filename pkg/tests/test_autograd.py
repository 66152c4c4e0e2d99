import numpy as np
import pytest

from sdeoperator.utils.autograd import (Tape, Tensor, add, backward, concat, dot, grad_check,
                                        matmul, mean_sq, reshape, scale, sigmoid, sub, tanh,
                                        transpose)
from sdeoperator.utils.errors import InvalidArgumentError


def _param(shape, seed):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=True)


def test_tanh_gradient_by_hand():
    x = Tensor([0.5], requires_grad=True)
    with Tape() as tape:
        y = mean_sq(tanh(x))
    (grad,) = backward(tape, y, [x])
    expected = 2.0 * np.tanh(0.5) * (1.0 - np.tanh(0.5) ** 2)
    assert grad[0] == pytest.approx(expected, rel=1e-14)
    assert x.grad is grad


def test_matmul_gradient_is_outer_product():
    w = _param((3, 2), 0)
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    with Tape() as tape:
        y = mean_sq(matmul(x, w))
    (grad,) = backward(tape, y, [w])
    np.testing.assert_allclose(grad, x.data.T @ (2.0 * (x.data @ w.data) / 2.0))


def test_shared_tensor_accumulates():
    a = Tensor([1.5, -2.0], requires_grad=True)
    with Tape() as tape:
        y = dot(a, a)
    (grad,) = backward(tape, y, [a])
    np.testing.assert_allclose(grad, 2.0 * a.data)


def test_unrelated_tensor_gets_zero_gradient():
    a = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([[3.0]], requires_grad=True)
    with Tape() as tape:
        y = mean_sq(a)
    grads = backward(tape, y, [a, unused])
    assert np.array_equal(grads[1], np.zeros((1, 1)))


def test_backward_needs_scalar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = scale(a, 2.0)
    with pytest.raises(InvalidArgumentError):
        backward(tape, y, [a])


def test_nothing_recorded_without_tape_or_grad():
    a = Tensor([1.0, 2.0])
    with Tape() as tape:
        tanh(a)
    assert len(tape) == 0
    b = Tensor([1.0, 2.0], requires_grad=True)
    value = tanh(b)
    assert value.requires_grad


def test_nested_tapes_record_on_innermost():
    a = Tensor([1.0], requires_grad=True)
    with Tape() as outer:
        with Tape() as inner:
            tanh(a)
        assert len(inner) == 1
    assert len(outer) == 0


def test_shape_errors():
    with pytest.raises(InvalidArgumentError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(InvalidArgumentError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))
    with pytest.raises(InvalidArgumentError):
        sub(Tensor(np.ones(2)), Tensor(np.ones(3)))
    with pytest.raises(InvalidArgumentError):
        reshape(Tensor(np.ones(6)), (4,))
    with pytest.raises(InvalidArgumentError):
        Tensor(np.ones((2, 2, 2)))


def test_composite_gradient_check():
    """Test tape gradients against central differences on a small network."""
    w1, b1, w2 = _param((3, 4), 1), _param((4,), 2), _param((4, 2), 3)
    x = Tensor(np.random.default_rng(4).standard_normal((5, 3)))
    target = Tensor(np.random.default_rng(5).standard_normal((2, 5)))

    def f(params):
        w1, b1, w2 = params
        hidden = sigmoid(add(matmul(x, w1), b1))
        out = transpose(tanh(matmul(hidden, w2)))
        return mean_sq(sub(out, target))

    assert grad_check(f, [w1, b1, w2], eps=1e-4, order=4) < 1e-5


def test_concat_and_reshape_gradients():
    a, b = _param((2, 2), 6), _param((2, 1), 7)

    def f(params):
        a, b = params
        joined = concat(a, b)
        return mean_sq(reshape(scale(joined, 3.0), (6,)))

    assert grad_check(f, [a, b], eps=1e-5, order=4) < 1e-6


def test_grad_check_validates_arguments():
    a = _param((2,), 8)
    with pytest.raises(InvalidArgumentError):
        grad_check(lambda p: mean_sq(p[0]), [a], eps=0.0)
    with pytest.raises(InvalidArgumentError):
        grad_check(lambda p: mean_sq(p[0]), [a], order=3)


def _gradients(f, params):
    with Tape() as tape:
        output = f(params)
    return backward(tape, output, params)


def test_gradient_is_linear_in_the_output():
    """Test grad(2f - 3g) = 2 grad(f) - 3 grad(g)."""
    w = _param((4,), 9)
    c = Tensor(np.random.default_rng(10).standard_normal(4))
    x = Tensor(np.random.default_rng(11).standard_normal((3, 4)))

    def f(params):
        return dot(c, params[0])

    def g(params):
        return mean_sq(tanh(matmul(x, reshape(params[0], (4, 1)))))

    def combined(params):
        return add(scale(f(params), 2.0), scale(g(params), -3.0))

    (df,) = _gradients(f, [w])
    (dg,) = _gradients(g, [w])
    (dh,) = _gradients(combined, [w])
    np.testing.assert_allclose(dh, 2.0 * df - 3.0 * dg, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_grad_check_on_linear_function(seed):
    w = _param((5,), seed)
    c = Tensor(np.random.default_rng(100 + seed).standard_normal(5))
    (grad,) = _gradients(lambda p: dot(c, p[0]), [w])
    np.testing.assert_array_equal(grad, c.data)
    assert grad_check(lambda p: dot(c, p[0]), [w], eps=1e-5, seed=seed) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_grad_check_on_quadratic_function(seed):
    """Test central differences are exact up to rounding on a quadratic."""
    w = _param((3, 2), seed)
    x = Tensor(np.random.default_rng(200 + seed).standard_normal((4, 3)))

    def f(params):
        return mean_sq(matmul(x, params[0]))

    (grad,) = _gradients(f, [w])
    np.testing.assert_allclose(grad, x.data.T @ (x.data @ w.data) * 2.0 / 8, rtol=1e-12,
                               atol=1e-14)
    assert grad_check(f, [w], eps=1e-4, seed=seed) < 1e-5
