import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dvib.ndmath import (
    Adam,
    AdamState,
    LinearLayer,
    Mlp,
    ShapeError,
    StaleTapeError,
    adam_step,
    matmul,
    mlp_forward,
)

from conftest import central_diff, max_rel_err


def test_matmul_identity():
    a = [[1, 2], [3, 4]]
    np.testing.assert_array_equal(matmul(a, np.eye(2)), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(np.eye(2), [[5], [7]]), [[5], [7]])


def test_matmul_row_sums():
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_associative(m, k, l, p, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.uniform(-1, 1, (m, k)), r.uniform(-1, 1, (k, l)), r.uniform(-1, 1, (l, p))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9, rtol=0)


def test_identity_layer_is_identity(rng):
    net = Mlp([LinearLayer(np.eye(3), np.zeros(3))], "identity")
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(net(x), x)


def test_zero_weights_repeat_bias(rng):
    net = Mlp.init([3, 4, 2], rng)
    for layer in net.layers:
        layer.weight[:] = 0
    net.layers[-1].bias[:] = [1.5, -2.0]
    np.testing.assert_array_equal(net(rng.normal(size=(5, 3))), np.tile([1.5, -2.0], (5, 1)))


def _scalar_loop_forward(net, x):
    out = []
    for row in x:
        h = list(row)
        for k, layer in enumerate(net.layers):
            nxt = []
            for j in range(layer.out_dim):
                s = layer.bias[j]
                for i in range(layer.in_dim):
                    s += h[i] * layer.weight[i, j]
                nxt.append(math.tanh(s) if k < len(net.layers) - 1 else s)
            h = nxt
        out.append(h)
    return np.array(out)


def test_forward_matches_scalar_loop(rng):
    net = Mlp.init([3, 5, 2], rng, "tanh")
    net.layers[0].bias[:] = rng.normal(size=5)
    x = rng.uniform(-1, 1, (4, 3))
    np.testing.assert_allclose(net(x), _scalar_loop_forward(net, x), rtol=1e-12, atol=1e-12)


def test_forward_is_pure(rng):
    net = Mlp.init([3, 5, 2], rng)
    x = rng.normal(size=(6, 3))
    a, _ = mlp_forward(net, x)
    b, _ = mlp_forward(net, x)
    assert a.tobytes() == b.tobytes()


def test_forward_shape_error(rng):
    with pytest.raises(ShapeError):
        Mlp.init([3, 2], rng)(np.ones((2, 4)))


def test_layers_must_chain(rng):
    with pytest.raises(ShapeError):
        Mlp([LinearLayer.init(3, 4, rng), LinearLayer.init(5, 2, rng)])


def test_identity_net_backward_passes_gradient(rng):
    net = Mlp([LinearLayer(np.eye(3), np.zeros(3))], "identity")
    x = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 3))
    _, tape = net.forward(x)
    np.testing.assert_array_equal(net.backward(tape, g), g)


def test_zero_output_grad_gives_zero_grads(rng):
    net = Mlp.init([3, 4, 2], rng)
    _, tape = net.forward(rng.normal(size=(5, 3)))
    gx = net.backward(tape, np.zeros((5, 2)))
    assert not gx.any()
    assert all(not g.any() for _, _, g in net.params())


def test_backward_shape_and_stale_tape(rng):
    net = Mlp.init([3, 4, 2], rng)
    other = Mlp.init([3, 6, 2], rng)
    _, tape = net.forward(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        net.backward(tape, np.ones((3, 2)))
    with pytest.raises(StaleTapeError):
        other.backward(tape, np.ones((2, 2)))


@pytest.mark.parametrize("activation", ["tanh", "relu", "identity"])
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(activation, seed):
    r = np.random.default_rng(seed)
    net = Mlp.init([4, 6, 5, 3], r, activation)
    for layer in net.layers:
        layer.bias[:] = r.uniform(-1, 1, layer.bias.shape)
    x = r.uniform(-1, 1, (5, 4))
    w = r.uniform(-1, 1, (5, 3))

    def loss():
        return float((net(x) * w).sum())

    _, tape = net.forward(x)
    gx = net.backward(tape, w)
    assert max_rel_err(gx, central_diff(loss, x)) <= 1e-5
    for _, p, g in net.params():
        # relu kinks make a few entries non-differentiable; random inputs avoid them a.s.
        assert max_rel_err(g, central_diff(loss, p), floor=1e-6) <= 1e-5


def test_relu_gradient_at_zero_is_zero():
    net = Mlp([LinearLayer(np.eye(2), np.zeros(2)), LinearLayer(np.eye(2), np.zeros(2))], "relu")
    x = np.array([[0.0, 1.0]])
    _, tape = net.forward(x)
    np.testing.assert_array_equal(net.backward(tape, np.ones((1, 2))), [[0.0, 1.0]])


def test_glorot_init_bounds(rng):
    layer = LinearLayer.init(30, 20, rng)
    assert np.abs(layer.weight).max() <= math.sqrt(6 / 50)
    assert not layer.bias.any()


def test_adam_zero_gradient_leaves_params(rng):
    p = [rng.normal(size=(3, 2))]
    before = p[0].copy()
    adam_step(p, [np.zeros((3, 2))], AdamState.zeros_like(p))
    np.testing.assert_array_equal(p[0], before)


def test_adam_first_step_moves_by_lr_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -7.0, 1e-3])]
    adam_step(p, g, AdamState.zeros_like(p), lr=1e-3)
    # bias-corrected m/sqrt(v) = g/|g| on the first step
    expected = np.array([1.0, -2.0, 0.5]) - 1e-3 * np.array([0.3 / (0.3 + 1e-8), -7.0 / (7.0 + 1e-8), 1e-3 / (1e-3 + 1e-8)])
    np.testing.assert_allclose(p[0], expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(p[0] - [1.0, -2.0, 0.5], [-1e-3, 1e-3, -1e-3], atol=1e-8)


@given(arrays(np.float64, (4,), elements=st.floats(-5, 5)), arrays(np.float64, (4,), elements=st.floats(-5, 5)))
def test_adam_deterministic(p0, g0):
    a, b = [p0.copy()], [p0.copy()]
    sa, sb = AdamState.zeros_like(a), AdamState.zeros_like(b)
    for _ in range(3):
        adam_step(a, [g0], sa)
        adam_step(b, [g0], sb)
    assert a[0].tobytes() == b[0].tobytes()


def test_adam_shape_check():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(3)], [np.zeros(4)], AdamState.zeros_like([np.zeros(3)]))


def test_adam_wrapper_updates_in_place(rng):
    net = Mlp.init([2, 3, 1], rng)
    params = [p for _, p, _ in net.params()]
    grads = [g for _, _, g in net.params()]
    opt = Adam(params, grads, lr=0.1)
    before = net.layers[0].weight.copy()
    net.layers[0].grad_weight[:] = 1.0
    opt.step()
    np.testing.assert_allclose(net.layers[0].weight, before - 0.1, atol=1e-6)
    assert opt.state.step == 1
