"""Turn a smooth-activation FCNN into a piecewise-linear network."""
from __future__ import annotations

import numpy as np

from .activations import Activation
from .errors import ContractError
from .nn import DenseLayer, Network, batched_logits
from .pwl import DEFAULT_DOMAIN, DEFAULT_GRID_POINTS, build_pwl


def linearize_network(net: Network, n: int, domain=DEFAULT_DOMAIN,
                      grid_points=DEFAULT_GRID_POINTS) -> Network:
    """Replace every sigmoid/tanh/elu activation by its n-piece approximation.

    Weights and biases are shared verbatim (copied arrays); relu and identity
    layers pass through unchanged.
    """
    cache = {}
    layers = []
    for i, layer in enumerate(net.layers):
        act = layer.activation
        if act.kind in ("sigmoid", "tanh", "elu"):
            key = (act.kind, act.alpha)
            if key not in cache:
                cache[key] = Activation("pwl", pwl=build_pwl(act, n, domain, grid_points))
            act = cache[key]
        elif act.kind not in ("relu", "identity"):
            raise ContractError(f"layer {i}: cannot linearize activation {act.kind!r}")
        layers.append(DenseLayer(layer.weights.copy(), layer.bias.copy(), act))
    return Network(layers)


def approximation_gap(net: Network, plnn: Network, X) -> dict:
    """Max and mean (over samples) of the L-infinity logit difference."""
    if net.input_dim != plnn.input_dim or net.output_dim != plnn.output_dim:
        raise ContractError("networks differ in input or output dimension")
    diff = np.abs(batched_logits(net, X) - batched_logits(plnn, X)).max(axis=1)
    return {"max_gap": float(diff.max()), "mean_gap": float(diff.mean())}


def gap_report(net: Network, plnn: Network, X, y, n: int) -> dict:
    y = np.asarray(y)
    a = batched_logits(net, X)
    b = batched_logits(plnn, X)
    diff = np.abs(a - b).max(axis=1)
    return {
        "n": n,
        "max_gap": float(diff.max()),
        "mean_gap": float(diff.mean()),
        "accuracy_original": float(np.mean(np.argmax(a, axis=1) == y)),
        "accuracy_plnn": float(np.mean(np.argmax(b, axis=1) == y)),
    }


def logit_margin(logits):
    """Top-1 minus top-2 logit per row."""
    s = np.sort(logits, axis=1)
    return s[:, -1] - s[:, -2]
