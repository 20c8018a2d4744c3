import sys

import numpy as np
import pytest

from clime.activations import Activation, parse_activation
from clime.data import Dataset
from clime.nn import DenseLayer, Network


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def random_net(rng, dims, act):
    layers = []
    for i in range(len(dims) - 1):
        a = act if i < len(dims) - 2 else Activation("identity")
        layers.append(DenseLayer(rng.normal(size=(dims[i + 1], dims[i])), rng.normal(size=dims[i + 1]), a))
    return Network(layers)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def digits28():
    """sklearn's 8x8 digits upsampled to 28x28, a stand-in for MNIST-shaped data."""
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = np.stack([zoom(im / 16.0, 3.5, order=1) for im in d.images]).clip(0, 1)
    return Dataset(imgs.reshape(len(imgs), -1), d.target, "digits28", [str(i) for i in range(10)])


ACTS = ["identity", "relu", "sigmoid", "tanh", "elu", "elu:0.5"]


def act_from_name(name):
    return parse_activation(name)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
