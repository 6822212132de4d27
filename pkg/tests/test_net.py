import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssdal.errors import ConfigError, ShapeError, ValidationError
from ssdal.net import (GradientBundle, Layer, NetworkConfig, NetworkParams, backward, backward_from_activation,
                       forward, gradient_check, init_network, load_checkpoint, save_checkpoint, sgd_step, sigmoid,
                       sigmoid_cross_entropy)


def small_net(seed=0, sizes=(5, 7, 3), act="tanh"):
    return init_network(NetworkConfig(sizes, act, seed))


def test_init_is_deterministic():
    a, b = small_net(4), small_net(4)
    assert a.equals(b)
    assert not a.equals(small_net(5))


def test_init_xavier_bounds_and_zero_bias():
    net = small_net(1, (30, 20, 10))
    for layer in net.layers:
        out_dim, in_dim = layer.weight.shape
        s = np.sqrt(6.0 / (in_dim + out_dim))
        assert np.all(np.abs(layer.weight) <= s)
        assert np.all(layer.bias == 0.0)


@pytest.mark.parametrize("sizes", [(3,), (3, 0, 2), ()])
def test_bad_layer_sizes(sizes):
    with pytest.raises(ConfigError):
        NetworkConfig(sizes)


def test_identity_layer_passes_input_through():
    net = NetworkParams([Layer(np.eye(3), np.zeros(3), "sigmoid")], NetworkConfig((3, 3)))
    x = np.array([[1.0, -2.0, 0.5]])
    trace = forward(net, x)
    np.testing.assert_array_equal(trace.logits, x)
    np.testing.assert_allclose(trace.scores, 1 / (1 + np.exp(-x)))


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(small_net(), np.zeros((2, 4)))


def test_zero_upstream_gives_zero_grads():
    net = small_net()
    trace = forward(net, np.random.default_rng(0).normal(size=(4, 5)))
    g = backward(net, trace, np.zeros((4, 3)))
    assert all(np.all(w == 0) for w in g.weights) and all(np.all(b == 0) for b in g.biases)
    with pytest.raises(ShapeError):
        backward(net, trace, np.zeros((4, 2)))


def test_sgd_step_rules():
    net = small_net()
    zero = GradientBundle.zeros_like(net)
    assert sgd_step(net, zero, 0.1).equals(net)
    with pytest.raises(ConfigError):
        sgd_step(net, zero, 0.0)
    ones = GradientBundle([np.ones_like(l.weight) for l in net.layers], [np.ones_like(l.bias) for l in net.layers])
    moved = sgd_step(net, ones, 0.5, frozen=(0,))
    np.testing.assert_array_equal(moved.layers[0].weight, net.layers[0].weight)
    np.testing.assert_array_equal(moved.layers[1].weight, net.layers[1].weight - 0.5)


def test_cross_entropy_ln2():
    loss, dz = sigmoid_cross_entropy(np.array([[0.0]]), np.array([[1.0]]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)
    assert dz[0, 0] == pytest.approx(-0.5)


def test_cross_entropy_rejects_non_binary():
    with pytest.raises(ValidationError):
        sigmoid_cross_entropy(np.zeros((1, 2)), np.array([[0.5, 1.0]]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-800, 800, allow_nan=False), min_size=1, max_size=8), st.integers(0, 255))
def test_cross_entropy_finite_nonnegative(z, mask):
    z = np.array([z])
    t = np.array([[(mask >> i) & 1 for i in range(z.shape[1])]], dtype=float)
    loss, dz = sigmoid_cross_entropy(z, t)
    assert np.isfinite(loss) and loss >= 0.0
    assert np.all(np.isfinite(dz))


def test_cross_entropy_matches_naive_formula():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(5, 4)) * 3
    t = (rng.random((5, 4)) < 0.5).astype(float)
    s = 1 / (1 + np.exp(-z))
    naive = -(t * np.log(s) + (1 - t) * np.log(1 - s)).sum(axis=1).mean()
    loss, dz = sigmoid_cross_entropy(z, t)
    assert loss == pytest.approx(naive, rel=1e-12)
    np.testing.assert_allclose(dz, (s - t) / 5, rtol=1e-12)


def test_sigmoid_stable_extremes():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_gradient_check_quadratic():
    net = NetworkParams([Layer(np.array([[3.0]]), np.zeros(1), "sigmoid")], NetworkConfig((1, 1)))

    def evaluate(p):
        w = p.layers[0].weight[0, 0]
        return w * w, GradientBundle([np.array([[2 * w]])], [np.zeros(1)])

    assert gradient_check(evaluate, net, 1e-5) < 1e-9


def test_gradient_check_validation():
    net = small_net()
    calls = []

    def flaky(p):
        calls.append(1)
        return float(len(calls)), GradientBundle.zeros_like(p)

    with pytest.raises(ValidationError):
        gradient_check(flaky, net)
    with pytest.raises(ValidationError):
        gradient_check(lambda p: (0.0, GradientBundle.zeros_like(p)), net, epsilon=1e-2)


@pytest.mark.parametrize("act", ["relu", "tanh"])
def test_backward_matches_finite_differences(act):
    net = small_net(2, (4, 6, 5, 3), act)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    t = (rng.random((6, 3)) < 0.5).astype(float)

    def evaluate(p):
        tr = forward(p, x)
        loss, dz = sigmoid_cross_entropy(tr.logits, t)
        return loss, backward(p, tr, dz)

    assert gradient_check(evaluate, net, 1e-5) < 1e-4


def test_backward_from_activation_matches_fd():
    net = small_net(3, (4, 6, 5, 3))
    x = np.random.default_rng(2).normal(size=(3, 4))
    w = np.random.default_rng(9).normal(size=(3, 5))

    def evaluate(p):
        tr = forward(p, x)
        h = tr.activations[-2]
        return float((w * h).sum()), backward_from_activation(p, tr, 1, w)

    assert gradient_check(evaluate, net, 1e-5) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    net = small_net(7, (4, 6, 3), "relu")
    net.layers[0].bias[:] = np.random.default_rng(0).normal(size=6)
    path = tmp_path / "m.model"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.equals(net)
    assert back.config.hidden_activation == "relu"
    first = path.read_bytes()
    save_checkpoint(back, path)
    assert path.read_bytes() == first


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.model"
    path.write_text("hello\n")
    with pytest.raises(ValidationError):
        load_checkpoint(path)
