import numpy as np
import pytest

from cflow import tensor as nc
from cflow.mlp import MLPParams, init_mlp, mlp_forward, zero_mlp
from cflow.tensor import ShapeError, Tape, Tensor

from numeric_checks import fd_grad, rel_err


def test_init_shapes_and_zero_bias():
    p = init_mlp([5, 8, 8, 3], np.random.default_rng(0))
    assert [(w.shape, b.shape) for w, b in p.layers] == [
        ((8, 5), (8,)), ((8, 8), (8,)), ((3, 8), (3,))]
    for _, b in p.layers:
        np.testing.assert_array_equal(b.data, 0.0)
    assert p.in_dim == 5 and p.out_dim == 3


def test_init_weight_scale_tracks_fan_in():
    p = init_mlp([400, 300, 2], np.random.default_rng(1))
    w0, w1 = p.layers[0][0].data, p.layers[1][0].data
    assert w0.std() == pytest.approx(1 / np.sqrt(400), rel=0.1)
    assert w1.std() == pytest.approx(1 / np.sqrt(300), rel=0.1)


def test_zero_mlp_outputs_zero():
    p = zero_mlp([4, 8, 8, 6])
    out = mlp_forward(p, Tensor(np.random.default_rng(2).normal(size=4)))
    np.testing.assert_array_equal(out.data, np.zeros(6))


def test_single_layer_is_affine():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    p = MLPParams([(Tensor(w), Tensor(b))])
    x = rng.normal(size=4)
    out = mlp_forward(p, Tensor(x))
    np.testing.assert_allclose(out.data, w @ x + b, rtol=1e-15)


def test_hidden_activation_is_tanh():
    # one hidden layer: out = W2 tanh(W1 x + b1) + b2
    rng = np.random.default_rng(4)
    w1, b1 = rng.normal(size=(8, 5)), rng.normal(size=8)
    w2, b2 = rng.normal(size=(2, 8)), rng.normal(size=2)
    p = MLPParams([(Tensor(w1), Tensor(b1)), (Tensor(w2), Tensor(b2))])
    x = rng.normal(size=5)
    out = mlp_forward(p, Tensor(x))
    np.testing.assert_allclose(out.data, w2 @ np.tanh(w1 @ x + b1) + b2, rtol=1e-14)


def test_gradients_through_mlp_match_finite_differences():
    rng = np.random.default_rng(5)
    p = init_mlp([4, 8, 8, 3], rng)
    x = rng.normal(size=4)
    w0_val = p.layers[0][0].data.copy()

    tape = Tape()
    tape.watch(p.layers[0][0])
    tape.backward(nc.reduce_sum(nc.tanh(mlp_forward(p, Tensor(x)))))
    got = p.layers[0][0].grad

    def f(w):
        q = MLPParams([(Tensor(w), p.layers[0][1])] + p.layers[1:])
        return nc.reduce_sum(nc.tanh(mlp_forward(q, Tensor(x)))).item()

    assert rel_err(got, fd_grad(f, w0_val)) < 1e-6


def test_wrong_input_shape_raises():
    p = init_mlp([4, 3], np.random.default_rng(6))
    with pytest.raises(ShapeError):
        mlp_forward(p, Tensor(np.zeros(5)))
    with pytest.raises(ShapeError):
        init_mlp([4], np.random.default_rng(0))


def test_init_is_deterministic_given_seed():
    a = init_mlp([6, 8, 2], np.random.default_rng(9))
    b = init_mlp([6, 8, 2], np.random.default_rng(9))
    for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
        np.testing.assert_array_equal(wa.data, wb.data)
        np.testing.assert_array_equal(ba.data, bb.data)
