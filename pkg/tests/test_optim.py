"""Adam update rule: bias correction, null steps, descent direction."""

import numpy as np
import pytest

from archnet.optim import AdamState, adam_step
from archnet.tensor import ShapeError, Tensor


def scalar_param(value):
    return Tensor(np.array([value]), requires_grad=True)


def test_zero_gradient_leaves_parameters_unchanged():
    p = scalar_param(1.5)
    p.grad = np.zeros(1)
    adam_step({"p": p}, AdamState(lr=1e-3))
    assert p.data[0] == 1.5


def test_missing_gradient_treated_as_zero():
    p = scalar_param(2.0)
    adam_step({"p": p}, AdamState(lr=1e-3))
    assert p.data[0] == 2.0


def test_first_step_magnitude_equals_lr():
    # with g=1: m_hat = 1, v_hat = 1 -> step = lr / (1 + eps) ~= lr
    p = scalar_param(0.0)
    p.grad = np.ones(1)
    state = AdamState(lr=1e-5)
    adam_step({"p": p}, state)
    assert state.t == 1
    assert -p.data[0] == pytest.approx(1e-5, rel=1e-6)


def test_constant_gradient_decreases_parameter_monotonically():
    p = scalar_param(1.0)
    state = AdamState(lr=1e-2)
    values = [p.data[0]]
    for _ in range(5):
        p.grad = np.ones(1)
        adam_step({"p": p}, state)
        values.append(p.data[0])
    assert all(b < a for a, b in zip(values, values[1:]))
    assert state.t == 5


def test_lr_zero_is_a_null_step():
    p = scalar_param(3.0)
    p.grad = np.full(1, 7.0)
    adam_step({"p": p}, AdamState(lr=0.0))
    assert p.data[0] == 3.0


def test_moment_shapes_mirror_parameters():
    rng = np.random.default_rng(0)
    params = {
        "w": Tensor(rng.standard_normal((3, 4)), requires_grad=True),
        "b": Tensor(rng.standard_normal(4), requires_grad=True),
    }
    state = AdamState()
    for p in params.values():
        p.grad = np.ones_like(p.data)
    adam_step(params, state)
    for name, p in params.items():
        assert state.m[name].shape == p.data.shape
        assert state.v[name].shape == p.data.shape


def test_gradient_shape_mismatch_rejected():
    p = Tensor(np.zeros((2, 2)), requires_grad=True)
    p.grad = np.zeros(3)
    with pytest.raises(ShapeError):
        adam_step({"p": p}, AdamState())


def test_matches_reference_formula_over_steps():
    # independent recomputation of the textbook update for a 2-element param
    rng = np.random.default_rng(1)
    p = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)

    ref = p.data.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for step in range(1, 8):
        g = rng.standard_normal(2)
        p.grad = g.copy()
        adam_step({"p": p}, state)

        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)
        np.testing.assert_allclose(p.data, ref, atol=1e-15)
