"""Forward-op correctness against hand values and brute-force oracles."""

import math

import numpy as np
import pytest

import archnet.tensor as T
from archnet.tensor import Tensor

from oracles import (
    formula_bce,
    formula_mse,
    naive_conv2d,
    naive_conv_transpose2d,
    naive_linear,
    naive_maxpool2d,
)


def t(arr, **kw):
    return Tensor(np.asarray(arr, dtype=np.float64), **kw)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
        out = T.conv2d(t(x), t([[[[1.0]]]]), t([0.0]), 1, 0)
        np.testing.assert_array_equal(out.data, x)

    def test_sum_of_ones(self):
        out = T.conv2d(t(np.ones((1, 1, 3, 3))), t(np.ones((1, 1, 2, 2))), t([0.0]), 1, 0)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((5, 3, 3, 3))
        b = rng.standard_normal(5)
        out = T.conv2d(t(x), t(w), t(b), 1, 1)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 1, 1), atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (1, 2), (3, 1)])
    def test_strided_padded_vs_oracle(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.standard_normal((1, 2, 9, 7))
        w = rng.standard_normal((4, 2, 3, 3))
        b = rng.standard_normal(4)
        out = T.conv2d(t(x), t(w), t(b), stride, padding)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, padding), atol=1e-12)

    def test_shape_law_property(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            h, w = rng.integers(3, 12, 2)
            kh = int(rng.integers(1, min(h, 4) + 1))
            stride = int(rng.integers(1, 4))
            padding = int(rng.integers(0, 3))
            cin, cout = rng.integers(1, 4, 2)
            x = rng.standard_normal((1, cin, h, w))
            k = rng.standard_normal((cout, cin, kh, kh))
            out = T.conv2d(t(x), t(k), t(np.zeros(cout)), stride, padding)
            ho = (h + 2 * padding - kh) // stride + 1
            wo = (w + 2 * padding - kh) // stride + 1
            assert out.shape == (1, cout, ho, wo)

    def test_channel_mismatch_names_dimension(self):
        with pytest.raises(T.ShapeError, match="channels"):
            T.conv2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((3, 5, 3, 3))), t(np.zeros(3)), 1, 1)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(T.ShapeError, match="kernel height"):
            T.conv2d(t(np.zeros((1, 1, 3, 3))), t(np.zeros((1, 1, 5, 5))), t(np.zeros(1)), 1, 0)


class TestConvTranspose2d:
    def test_single_pixel_expansion(self):
        out = T.conv_transpose2d(t([[[[2.5]]]]), t(np.ones((1, 1, 2, 2))), t([0.0]), 2)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.5))

    def test_doubling_rule(self):
        x = np.zeros((1, 1, 28, 28))
        w = np.zeros((1, 3, 2, 2))
        out = T.conv_transpose2d(t(x), t(w), t(np.zeros(3)), 2)
        assert out.shape == (1, 3, 56, 56)

    def test_matches_scatter_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 4, 5))
        w = rng.standard_normal((3, 2, 2, 2))
        b = rng.standard_normal(2)
        out = T.conv_transpose2d(t(x), t(w), t(b), 2)
        np.testing.assert_allclose(out.data, naive_conv_transpose2d(x, w, b, 2), atol=1e-12)

    def test_adjoint_of_conv2d(self):
        # forward of conv_transpose2d == input-gradient of conv2d, same kernel/stride
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.standard_normal((1, 2, 4, 4))
            k = rng.standard_normal((2, 3, 2, 2))
            fwd = T.conv_transpose2d(t(x), t(k), t(np.zeros(3)), 2).data
            y = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
            out = T.conv2d(y, t(k), t(np.zeros(2)), stride=2, padding=0)
            target = out.data - x * (out.data.size / 2.0)  # makes the mse cotangent equal x
            T.backward(T.mse_loss(out, Tensor(target)))
            np.testing.assert_allclose(fwd, y.grad, atol=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(T.ShapeError, match="channels"):
            T.conv_transpose2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((3, 1, 2, 2))), t(np.zeros(1)), 2)


class TestLinear:
    def test_identity(self):
        x = np.arange(6, dtype=np.float64).reshape(2, 3)
        out = T.linear(t(x), t(np.eye(3)), t(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_arithmetic(self):
        out = T.linear(t([[1.0, 2.0]]), t([[1.0, 1.0], [0.0, 1.0]]), t([1.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[4.0, 2.0]])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 10))
        w = rng.standard_normal((7, 10))
        b = rng.standard_normal(7)
        np.testing.assert_allclose(T.linear(t(x), t(w), t(b)).data, naive_linear(x, w, b), atol=1e-12)

    def test_feature_mismatch(self):
        with pytest.raises(T.ShapeError, match="features"):
            T.linear(t(np.zeros((2, 5))), t(np.zeros((3, 4))), t(np.zeros(3)))


class TestActivationsAndPooling:
    def test_relu_hand(self):
        np.testing.assert_array_equal(T.relu(t([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_idempotent(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(50)
        once = T.relu(t(x)).data
        twice = T.relu(T.relu(t(x))).data
        np.testing.assert_array_equal(once, twice)

    def test_sigmoid_symmetry_point(self):
        assert T.sigmoid(t([0.0])).data[0] == 0.5

    def test_sigmoid_strictly_in_unit_interval(self):
        x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
        out = T.sigmoid(t(x)).data
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_maxpool_window_max(self):
        out = T.maxpool2d(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_maxpool_vs_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 7, 9))
        for k, s in [(2, 2), (3, 1), (3, 2), (2, 3)]:
            np.testing.assert_array_equal(T.maxpool2d(t(x), k, s).data, naive_maxpool2d(x, k, s))


class TestLosses:
    def test_bce_perfect_prediction(self):
        ones = t(np.ones((2, 3)))
        assert T.bce_loss(ones, ones).item() == pytest.approx(0.0, abs=1e-6)

    def test_bce_half(self):
        halves = t(np.full((4,), 0.5))
        assert T.bce_loss(halves, halves).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_bce_vs_formula(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(0.01, 0.99, (3, 5))
        q = rng.uniform(0, 1, (3, 5))
        assert T.bce_loss(t(p), t(q)).item() == pytest.approx(formula_bce(p, q), abs=1e-12)

    def test_mse_identical(self):
        x = t(np.arange(4.0))
        assert T.mse_loss(x, t(np.arange(4.0))).item() == 0.0

    def test_mse_hand(self):
        assert T.mse_loss(t([0.0, 0.0]), t([1.0, 1.0])).item() == 1.0

    def test_mse_vs_formula(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        assert T.mse_loss(t(a), t(b)).item() == pytest.approx(formula_mse(a, b), abs=1e-12)

    def test_loss_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.mse_loss(t(np.zeros(3)), t(np.zeros(4)))
        with pytest.raises(T.ShapeError):
            T.bce_loss(t(np.zeros((2, 2))), t(np.zeros(4)))

    def test_softmax_cross_entropy_uniform(self):
        logits = t(np.zeros((2, 4)))
        loss = T.softmax_cross_entropy(logits, np.array([0, 3]))
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_softmax_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            T.softmax_cross_entropy(t(np.zeros((1, 3))), np.array([3]))


def test_finite_check_fires():
    with np.errstate(over="ignore"):
        with pytest.raises(T.NonFiniteError):
            T.mse_loss(t(np.full((4,), 1e200)), t(np.full((4,), -1e200)))
    # the stable sigmoid itself never overflows, even for huge inputs
    out = T.sigmoid(t(np.full((4,), 800.0))).data
    assert out.max() < 1.0
