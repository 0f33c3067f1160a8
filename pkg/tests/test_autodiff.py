"""Reverse-pass semantics and finite-difference gradient checks."""

import numpy as np
import pytest

import archnet.tensor as T
from archnet.arch import build_archnet, decode, desk_config, encode
from archnet.tensor import Tensor


def test_analytic_derivative_of_mse():
    x = Tensor(np.array(3.0), requires_grad=True)
    T.backward(T.mse_loss(x, Tensor(np.array(0.0))))
    assert x.grad == pytest.approx(6.0)


def test_backward_requires_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(T.GraphError, match="scalar"):
        T.backward(T.relu(x))


def test_backward_requires_graph():
    with pytest.raises(T.GraphError):
        T.backward(Tensor(np.array(1.0)))


def test_backward_twice_is_an_error():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    loss = T.mse_loss(T.relu(x), Tensor(np.zeros(2)))
    T.backward(loss)
    with pytest.raises(T.GraphError, match="already called"):
        T.backward(loss)


def test_intermediate_grads_freed():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    mid = T.relu(x)
    T.backward(T.mse_loss(mid, Tensor(np.zeros(2))))
    assert x.grad is not None
    assert mid.grad is None  # non-parameter node keeps no gradient


def test_fanout_accumulates_additively():
    # x feeds both arguments of the loss; grad must be the sum of both paths
    x = Tensor(np.array([0.4, -1.3, 2.0]), requires_grad=True)
    err = T.grad_check(lambda: T.mse_loss(T.relu(x), T.sigmoid(x)), [x])
    assert err < 1e-4

    # analytic cross-check on a single element: d/dx mse(relu(x), sigmoid(x))
    x1 = Tensor(np.array([2.0]), requires_grad=True)
    T.backward(T.mse_loss(T.relu(x1), T.sigmoid(x1)))
    s = 1.0 / (1.0 + np.exp(-2.0))
    expected = 2.0 * (2.0 - s) * (1.0 - s * (1.0 - s))
    assert x1.grad[0] == pytest.approx(expected, rel=1e-12)


def test_grad_check_constant_function_is_zero():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    c = Tensor(np.array([5.0, 5.0]))
    assert T.grad_check(lambda: T.mse_loss(c, Tensor(np.array([0.0, 0.0]))), [x]) == 0.0


class TestGradCheckPerOp:
    """Every differentiable op against central finite differences."""

    def test_conv2d(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        tgt = Tensor(rng.standard_normal((2, 3, 3, 3)))
        err = T.grad_check(lambda: T.mse_loss(T.conv2d(x, w, b, 2, 1), tgt), [x, w, b])
        assert err < 1e-4

    def test_conv_transpose2d(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        tgt = Tensor(rng.standard_normal((1, 3, 6, 6)))
        err = T.grad_check(lambda: T.mse_loss(T.conv_transpose2d(x, w, b, 2), tgt), [x, w, b])
        assert err < 1e-4

    def test_linear_chain_relu(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        tgt = Tensor(rng.standard_normal((4, 3)))
        err = T.grad_check(lambda: T.mse_loss(T.relu(T.linear(x, w, b)), tgt), [x, w, b])
        assert err < 1e-4

    def test_maxpool(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
        tgt = Tensor(rng.standard_normal((2, 2, 3, 3)))
        assert T.grad_check(lambda: T.mse_loss(T.maxpool2d(x, 2, 2), tgt), [x]) < 1e-4

    def test_sigmoid_bce(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        tgt = Tensor(rng.uniform(0, 1, (3, 4)))
        assert T.grad_check(lambda: T.bce_loss(T.sigmoid(x), tgt), [x]) < 1e-4

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(15)
        x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        labels = rng.integers(0, 4, 5)
        assert T.grad_check(lambda: T.softmax_cross_entropy(x, labels), [x]) < 1e-4


def test_grad_check_full_desk_net_one_sample():
    # deep composition: encoder + decoder + loss, subsampled entries per tensor
    net = build_archnet(desk_config(), seed=3)
    rng = np.random.default_rng(16)
    x = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)))
    params = list(net.parameters().values())

    def forward():
        out = decode(net, encode(net, x))
        return T.mse_loss(out, x)

    err = T.grad_check(forward, params, h=1e-5, entries_per_param=4, rng=np.random.default_rng(0))
    assert err < 1e-3
