import numpy as np
import pytest

from cflow.optim import AdamState, adam_step
from cflow.tensor import ShapeError


def test_zero_grads_leave_params_unchanged():
    params = [np.array([1.0, -2.0]), np.array([[3.0]])]
    grads = [np.zeros(2), np.zeros((1, 1))]
    new, _ = adam_step(params, grads, AdamState.zeros_like(params),
                       lr=0.1, t=1)
    for p, q in zip(params, new):
        np.testing.assert_array_equal(p, q)


def test_first_step_magnitude_is_lr():
    # m_hat = v_hat = 1 after bias correction, so the update is
    # lr / (1 + eps)
    params = [np.array([0.0])]
    grads = [np.array([1.0])]
    new, state = adam_step(params, grads, AdamState.zeros_like(params),
                           lr=1e-3, t=1)
    assert new[0][0] == pytest.approx(-1e-3, rel=1e-7)
    np.testing.assert_allclose(state.m[0], [0.1])
    np.testing.assert_allclose(state.v[0], [0.001])


def test_quadratic_bowl_converges():
    x = [np.array([5.0, -3.0, 2.0])]
    state = AdamState.zeros_like(x)
    for t in range(1, 2001):
        x, state = adam_step(x, [x[0].copy()], state, lr=0.01, t=t)
    assert np.abs(x[0]).max() < 1e-3


def test_two_steps_match_hand_computation():
    b1, b2, lr, eps = 0.9, 0.999, 0.5, 1e-8
    p = [np.array([1.0])]
    state = AdamState.zeros_like(p)
    p, state = adam_step(p, [np.array([2.0])], state, lr, b1, b2, eps, t=1)
    p, state = adam_step(p, [np.array([-1.0])], state, lr, b1, b2, eps, t=2)

    m = 0.1 * 2.0
    v = 0.001 * 4.0
    p_ref = 1.0 - lr * (m / 0.1) / (np.sqrt(v / 0.001) + eps)
    m = b1 * m + 0.1 * -1.0
    v = b2 * v + 0.001 * 1.0
    p_ref -= lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)
    assert p[0][0] == pytest.approx(p_ref, abs=1e-14)


def test_contract_errors():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), lr=0.1, t=0)
    with pytest.raises(ShapeError):
        adam_step(p, [np.zeros(3)], AdamState.zeros_like(p), lr=0.1, t=1)
    with pytest.raises(ShapeError):
        adam_step(p, [np.zeros(2), np.zeros(1)], AdamState.zeros_like(p),
                  lr=0.1, t=1)
