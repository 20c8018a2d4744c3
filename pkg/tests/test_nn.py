import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clime.activations import IDENTITY, RELU, Activation, parse_activation
from clime.errors import ContractError, NumericError
from clime.linearize import linearize_network
from clime.nn import (DenseLayer, LossSpec, Network, TrainConfig, backward, cross_entropy,
                      forward, input_gradient, kd_loss, parse_arch, saliency, train)
from conftest import ACTS, central_diff, random_net, rel_err


def test_identity_net_passes_input_through():
    net = Network([DenseLayer(np.eye(2), np.zeros(2))])
    assert forward(net, np.array([[1.0, 2.0]])).tolist() == [[1.0, 2.0]]


def test_two_neuron_relu_hand_evaluation():
    net = Network([DenseLayer([[1.0], [-1.0]], [0, 0], RELU), DenseLayer([[1.0, 1.0]], [0.0])])
    inputs, pres, out = net.trace(np.array([[3.0]]))
    assert net.layers[0].activation(pres[0]).tolist() == [[3.0, 0.0]]
    assert out.tolist() == [[3.0]]


def test_dimension_mismatch_names_layer():
    net = Network.mlp([3, 4, 2], RELU)
    with pytest.raises(ContractError, match="layer 0"):
        net.forward(np.zeros((1, 2)))
    with pytest.raises(ContractError, match="layer 1"):
        Network([DenseLayer(np.zeros((4, 3)), np.zeros(4), RELU), DenseLayer(np.zeros((2, 5)), np.zeros(2))])


def test_output_layer_must_be_identity():
    with pytest.raises(ContractError):
        Network([DenseLayer(np.zeros((2, 2)), np.zeros(2), RELU)])


def test_parse_arch():
    assert parse_arch("784-256-64-10") == [784, 256, 64, 10]
    for bad in ["784", "a-b", "3--2", "0-2"]:
        with pytest.raises(ContractError):
            parse_arch(bad)


def test_zero_weight_ce_gradient_is_uniform_minus_onehot():
    c = 4
    net = Network([DenseLayer(np.zeros((c, 3)), np.zeros(c))])
    g = backward(net, np.ones((1, 3)), [2])
    # dL/db = softmax - onehot for a single sample
    expected = np.full(c, 1 / c)
    expected[2] -= 1
    np.testing.assert_allclose(g.biases[0], expected, atol=1e-15)


@pytest.mark.parametrize("act", ACTS)
def test_gradients_match_finite_differences(act, rng):
    net = random_net(rng, [3, 5, 4, 3], parse_activation(act))
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, size=6)
    g = backward(net, X, y)

    def loss():
        return cross_entropy(net.forward(X), y)

    for i, layer in enumerate(net.layers):
        assert rel_err(g.weights[i], central_diff(loss, layer.weights)) < 1e-4
        assert rel_err(g.biases[i], central_diff(loss, layer.bias)) < 1e-4
    assert rel_err(g.inputs, central_diff(loss, X)) < 1e-4


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 3), width=st.integers(1, 16),
       act=st.sampled_from(ACTS))
def test_gradient_property(seed, depth, width, act):
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(1, 6))] + [width] * (depth - 1) + [int(rng.integers(2, 5))]
    net = random_net(rng, dims, parse_activation(act))
    X = rng.normal(size=(3, dims[0]))
    y = rng.integers(0, dims[-1], size=3)
    g = backward(net, X, y)
    num = central_diff(lambda: cross_entropy(net.forward(X), y), net.layers[0].weights)
    # relu kinks make finite differences fail only when a pre-activation sits within h of 0
    pre = X @ net.layers[0].weights.T + net.layers[0].bias
    if act == "relu" and np.min(np.abs(pre)) < 1e-3:
        return
    assert rel_err(g.weights[0], num) < 1e-4


def test_kd_loss_gradients_match_finite_differences(rng):
    net = random_net(rng, [3, 6, 4], Activation("tanh"))
    X = rng.normal(size=(5, 3))
    y = rng.integers(0, 4, size=5)
    t = rng.normal(size=(5, 4)) * 2
    spec = LossSpec("kd", 0.3, 4.0)
    g = backward(net, X, y, spec, teacher_logits=t)
    num = central_diff(lambda: kd_loss(net.forward(X), t, y, 0.3, 4.0), net.layers[0].weights)
    assert rel_err(g.weights[0], num) < 1e-4


def test_relu_all_active_input_gradient_is_weight_product():
    W1 = np.array([[1.0, 2.0], [0.5, 1.0]])
    W2 = np.array([[2.0, -1.0], [1.0, 1.0]])
    net = Network([DenseLayer(W1, [1, 1], RELU), DenseLayer(W2, [0, 0])])
    x = np.array([[1.0, 1.0]])
    for k in range(2):
        np.testing.assert_allclose(input_gradient(net, x, k)[0], (W2 @ W1)[k])


def test_cross_entropy_values():
    assert math.isclose(cross_entropy(np.zeros((3, 7)), [0, 3, 6]), math.log(7), rel_tol=1e-15)
    assert cross_entropy(np.array([[1000.0, 0.0]]), [0]) == pytest.approx(0.0, abs=1e-300)
    # -log(e^3 / (e + e^2 + e^3)) = log(1 + e^-1 + e^-2)
    assert cross_entropy(np.array([[1.0, 2.0, 3.0]]), [2]) == pytest.approx(
        math.log(1 + math.exp(-1) + math.exp(-2)), rel=1e-14)
    assert cross_entropy(np.array([[1.0, 2.0, 3.0]]), [2]) == pytest.approx(0.40760596, abs=1e-8)


def test_kd_loss_cases(rng):
    s = rng.normal(size=(4, 3))
    t = rng.normal(size=(4, 3))
    y = [0, 1, 2, 0]
    assert kd_loss(s, t, y, 1.0, 3.0) == cross_entropy(s, y)
    assert kd_loss(s, s, y, 0.0, 2.0) == pytest.approx(0.0, abs=1e-15)
    # student (0,1), teacher (1,0), label 1: CE = log(1+e^-1), KL = sigmoid(1) - sigmoid(-1) = tanh(1/2)
    val = kd_loss(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]), [1], 0.5, 1.0)
    assert val == pytest.approx(0.5 * math.log(1 + math.exp(-1)) + 0.5 * math.tanh(0.5), rel=1e-13)
    with pytest.raises(NumericError):
        kd_loss(np.array([[np.nan, 0.0]]), np.zeros((1, 2)), [0], 0.5, 1.0)
    with pytest.raises(ContractError):
        kd_loss(s, t, y, 1.5, 1.0)


@pytest.mark.parametrize("act", ["sigmoid", "tanh", "elu"])
def test_pwl_network_forward_is_continuous(act, rng):
    plnn = linearize_network(random_net(rng, [1, 3, 2], parse_activation(act)), 5)
    layer = plnn.layers[0]
    for b in layer.activation.pwl.breakpoints:
        for unit in range(3):
            w, c = layer.weights[unit, 0], layer.bias[unit]
            x0 = (b - c) / w
            eps = 1e-9 / abs(w)
            left = plnn.forward(np.array([[x0 - eps]]))
            right = plnn.forward(np.array([[x0 + eps]]))
            assert np.max(np.abs(left - right)) < 1e-6


def toy_data(rng, n=200):
    X = rng.normal(size=(n, 2))
    return X, (X[:, 0] + X[:, 1] > 0).astype(int)


def test_training_is_deterministic(rng):
    X, y = toy_data(rng)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=16, epochs=3, seed=7)
    a, ha = train(Network.mlp([2, 8, 2], RELU, seed=3), X, y, cfg)
    b, hb = train(Network.mlp([2, 8, 2], RELU, seed=3), X, y, cfg)
    for pa, pb in zip(a.params(), b.params()):
        assert np.array_equal(pa, pb)
    assert ha == hb


def test_zero_learning_rate_leaves_parameters(rng):
    X, y = toy_data(rng)
    net = Network.mlp([2, 8, 2], RELU, seed=3)
    for opt in ("sgd", "adam"):
        out, _ = train(net, X, y, TrainConfig(learning_rate=0.0, epochs=1, optimizer=opt))
        for pa, pb in zip(net.params(), out.params()):
            assert np.array_equal(pa, pb)


def test_training_learns_and_reports(rng):
    X, y = toy_data(rng, 500)
    net, hist = train(Network.mlp([2, 8, 2], RELU), X, y, TrainConfig(learning_rate=1e-2, batch_size=32, epochs=20))
    assert len(hist) == 20 and hist[-1]["accuracy"] > 0.97
    assert hist[-1]["loss"] < hist[0]["loss"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_context(rng):
    X, y = toy_data(rng)
    net = Network.mlp([2, 8, 2], RELU)
    with pytest.raises(NumericError, match="epoch 0"):
        train(net, X * 1e308, y, TrainConfig(learning_rate=1.0, optimizer="sgd", epochs=2))


def test_saliency():
    net = Network([DenseLayer([[2.0, -3.0], [1.0, 1.0]], [0.5, 0.0])])
    assert np.all(saliency(net, np.zeros(2), 0) == 0)
    np.testing.assert_allclose(saliency(net, np.array([1.5, 2.0]), 0), [3.0, -6.0])


def test_json_round_trip_is_exact(tmp_path, rng):
    net = random_net(rng, [3, 4, 2], Activation("elu", alpha=0.7))
    plnn = linearize_network(random_net(rng, [3, 4, 2], Activation("sigmoid")), 4)
    for n in (net, plnn):
        n.save(tmp_path / "m.json")
        back = Network.load(tmp_path / "m.json")
        assert back.to_dict() == n.to_dict()
        X = rng.normal(size=(5, 3))
        assert np.array_equal(back.forward(X), n.forward(X))
