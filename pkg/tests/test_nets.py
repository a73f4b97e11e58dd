"""Dense-net substrate: forward, analytic gradients, Adam."""

from __future__ import annotations

import numpy as np
import pytest

from convexrl.nets import (
    Activation,
    AdamState,
    DenseLayer,
    DivergenceError,
    Mlp,
    adam_step,
    backward,
    forward,
    grads_to_flat,
    mlp_init,
)


def finite_diff_input(f, x, h=1e-5):
    """Central finite differences of a scalar function of a vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def test_zero_weight_net_returns_bias():
    b = np.array([1.5, -2.0, 0.25])
    net = Mlp([DenseLayer(np.zeros((3, 4)), b, Activation.IDENTITY)])
    for x in (np.zeros(4), np.ones(4), np.array([3.0, -1.0, 2.0, 7.0])):
        assert np.array_equal(forward(net, x), b)


def test_relu_identity_weight():
    net = Mlp([DenseLayer(np.eye(2), np.zeros(2), Activation.RELU)])
    out = forward(net, np.array([-1.0, 2.0]))
    assert np.array_equal(out, np.array([0.0, 2.0]))


def test_two_layer_matches_matrix_product_oracle():
    rng = np.random.default_rng(7)
    net = mlp_init([3, 5, 2], [Activation.TANH, Activation.IDENTITY], rng)
    x = np.array([0.3, -1.2, 0.8])
    # hand-rolled oracle: explicit matrix products, no shared code path
    w0, b0 = net.layers[0].weight, net.layers[0].bias
    w1, b1 = net.layers[1].weight, net.layers[1].bias
    expected = w1 @ np.tanh(w0 @ x + b0) + b1
    assert np.allclose(forward(net, x), expected, atol=1e-12, rtol=0)


def test_forward_is_pure():
    rng = np.random.default_rng(3)
    net = mlp_init([4, 8, 3], [Activation.SOFTPLUS, Activation.IDENTITY], rng)
    x = rng.normal(size=4)
    a = forward(net, x)
    b = forward(net, x)
    assert np.array_equal(a, b)


def test_softplus_strictly_positive():
    rng = np.random.default_rng(11)
    net = mlp_init([3, 6], [Activation.SOFTPLUS], rng)
    for _ in range(50):
        assert np.all(forward(net, rng.normal(scale=5.0, size=3)) > 0.0)


def test_batched_forward_matches_loop():
    rng = np.random.default_rng(5)
    net = mlp_init([3, 7, 2], [Activation.RELU, Activation.IDENTITY], rng)
    xs = rng.normal(size=(9, 3))
    batched = forward(net, xs)
    assert batched.shape == (9, 2)
    for i in range(9):
        assert np.allclose(batched[i], forward(net, xs[i]), atol=1e-14)


def test_dimension_mismatch_raises():
    net = Mlp([DenseLayer(np.zeros((2, 3)), np.zeros(2), Activation.IDENTITY)])
    with pytest.raises(ValueError):
        forward(net, np.zeros(4))
    with pytest.raises(ValueError):
        Mlp([
            DenseLayer(np.zeros((2, 3)), np.zeros(2), Activation.IDENTITY),
            DenseLayer(np.zeros((2, 5)), np.zeros(2), Activation.IDENTITY),
        ])


def test_identity_layer_input_grad_is_weight_transpose():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 4))
    net = Mlp([DenseLayer(w, np.zeros(3), Activation.IDENTITY)])
    up = np.array([1.0, -2.0, 0.5])
    _, gin = backward(net, np.zeros(4), up)
    assert np.allclose(gin, w.T @ up, atol=1e-14)


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(1)
    net = mlp_init([4, 6, 2], [Activation.TANH, Activation.IDENTITY], rng)
    pg, gin = backward(net, rng.normal(size=4), np.zeros(2))
    assert np.all(gin == 0.0)
    for dw, db in pg:
        assert np.all(dw == 0.0) and np.all(db == 0.0)


@pytest.mark.parametrize("seed", range(6))
def test_input_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    net = mlp_init(
        [5, 8, 8, 3],
        [Activation.TANH, Activation.SOFTPLUS, Activation.IDENTITY],
        rng,
    )
    x = rng.normal(size=5)
    up = rng.normal(size=3)
    _, gin = backward(net, x, up)
    fd = finite_diff_input(lambda v: float(up @ forward(net, v)), x)
    assert np.allclose(gin, fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_param_grads_match_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    net = mlp_init([3, 6, 2], [Activation.SOFTPLUS, Activation.IDENTITY], rng)
    x = rng.normal(size=3)
    up = rng.normal(size=2)
    pg, _ = backward(net, x, up)
    gflat = grads_to_flat(net, pg)
    theta = net.flat()
    h = 1e-5

    def loss(vec):
        saved = net.flat()
        net.load_flat(vec)
        val = float(up @ forward(net, x))
        net.load_flat(saved)
        return val

    fd = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (loss(tp) - loss(tm)) / (2.0 * h)
    assert np.allclose(gflat, fd, rtol=1e-6, atol=1e-9)


def test_batched_backward_sums_param_grads():
    rng = np.random.default_rng(9)
    net = mlp_init([3, 5, 2], [Activation.TANH, Activation.IDENTITY], rng)
    xs = rng.normal(size=(4, 3))
    ups = rng.normal(size=(4, 2))
    pg, gin = backward(net, xs, ups)
    total = np.zeros(net.flat().size)
    for i in range(4):
        pgi, gini = backward(net, xs[i], ups[i])
        total += grads_to_flat(net, pgi)
        assert np.allclose(gin[i], gini, atol=1e-12)
    assert np.allclose(grads_to_flat(net, pg), total, atol=1e-10)


def test_adam_zero_grad_keeps_params():
    state = AdamState(dim=4)
    p = np.array([1.0, -2.0, 0.0, 3.0])
    out = adam_step(p, np.zeros(4), state)
    assert np.array_equal(out, p)
    assert state.step == 1


def test_adam_first_step_magnitude_and_sign():
    state = AdamState(dim=3, lr=1e-3)
    g = np.array([4.0, -0.5, 1e-3])
    out = adam_step(np.zeros(3), g, state)
    # bias-corrected first step is ~lr in magnitude, opposite sign of g
    assert np.allclose(np.abs(out), 1e-3, rtol=1e-4)
    assert np.all(np.sign(out) == -np.sign(g))


def test_adam_quadratic_bowl_converges():
    # oracle: minimize ||p - p*||^2; optimum is p* itself
    rng = np.random.default_rng(42)
    target = rng.uniform(-0.05, 0.05, size=6)
    state = AdamState(dim=6, lr=5e-4)
    p = np.zeros(6)
    for _ in range(200):
        p = adam_step(p, 2.0 * (p - target), state)
    assert np.linalg.norm(p - target, ord=np.inf) < 1e-3


def test_adam_rejects_nonfinite_grads():
    state = AdamState(dim=2)
    with pytest.raises(DivergenceError):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), state)
    with pytest.raises(DivergenceError):
        adam_step(np.zeros(2), np.array([np.inf, 0.0]), state)


def test_flat_roundtrip():
    rng = np.random.default_rng(21)
    net = mlp_init([3, 4, 2], [Activation.RELU, Activation.IDENTITY], rng)
    vec = net.flat()
    other = mlp_init([3, 4, 2], [Activation.RELU, Activation.IDENTITY], rng)
    other.load_flat(vec)
    x = rng.normal(size=3)
    assert np.array_equal(forward(net, x), forward(other, x))
    with pytest.raises(ValueError):
        other.load_flat(vec[:-1])
