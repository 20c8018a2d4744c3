import numpy as np
import pytest

from clime.activations import RELU, Activation
from clime.errors import ContractError
from clime.linearize import approximation_gap, gap_report, linearize_network, logit_margin
from clime.nn import Network
from conftest import random_net


def test_relu_network_is_a_fixed_point(rng):
    net = random_net(rng, [3, 5, 4, 2], RELU)
    plnn = linearize_network(net, 4)
    X = rng.normal(size=(100, 3))
    assert approximation_gap(net, plnn, X)["max_gap"] == 0.0
    for a, b in zip(net.layers, plnn.layers):
        assert a.activation.kind == b.activation.kind


def test_parameters_copied_bit_identically(rng):
    net = random_net(rng, [3, 5, 2], Activation("tanh"))
    plnn = linearize_network(net, 5)
    for a, b in zip(net.params(), plnn.params()):
        assert a.tobytes() == b.tobytes() and a is not b


def test_sigmoid_gap_at_origin_is_zero():
    net = Network.mlp([1, 1, 1], Activation("sigmoid"), seed=0)
    net.layers[0].bias[:] = 0
    plnn = linearize_network(net, 3)
    assert approximation_gap(net, plnn, np.zeros((1, 1)))["max_gap"] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "elu"])
def test_gap_shrinks_with_segments(kind, rng):
    net = random_net(rng, [4, 8, 6, 3], Activation(kind))
    X = rng.normal(size=(500, 4))
    gaps = [approximation_gap(net, linearize_network(net, n), X)["mean_gap"] for n in (2, 3, 5, 9)]
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_small_gap_preserves_predictions(rng):
    net = random_net(rng, [4, 8, 3], Activation("sigmoid"))
    plnn = linearize_network(net, 12)
    X = rng.normal(size=(2000, 4))
    diff = np.abs(net.forward(X) - plnn.forward(X)).max(axis=1)
    safe = diff < logit_margin(net.forward(X)) / 2
    assert safe.mean() > 0.5
    assert np.array_equal(net.predict(X[safe]), plnn.predict(X[safe]))


def test_gap_report_fields(rng):
    net = random_net(rng, [2, 4, 2], Activation("elu"))
    X = rng.normal(size=(50, 2))
    rep = gap_report(net, linearize_network(net, 3), X, rng.integers(0, 2, 50), 3)
    assert set(rep) == {"n", "max_gap", "mean_gap", "accuracy_original", "accuracy_plnn"}
    assert rep["max_gap"] >= rep["mean_gap"] >= 0


def test_dimension_mismatch(rng):
    with pytest.raises(ContractError):
        approximation_gap(random_net(rng, [2, 3, 2], RELU), random_net(rng, [3, 3, 2], RELU), np.zeros((1, 2)))


def test_saliency_survives_linearization(digits28):
    from clime.nn import TrainConfig, saliency, train

    ds = digits28.subset(np.arange(800))
    net, _ = train(Network.mlp("784-256-64-10", Activation("sigmoid"), seed=0), ds.features, ds.labels,
                   TrainConfig(learning_rate=1e-3, batch_size=64, epochs=5, seed=0))
    plnn = linearize_network(net, 5)
    for x in digits28.features[1000:1010]:
        c = int(net.predict(x)[0])
        a, b = saliency(net, x, c), saliency(plnn, x, c)
        assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) > 0.9
