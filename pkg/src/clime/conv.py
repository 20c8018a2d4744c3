"""Convolutional teacher networks (LeNet-style), numpy forward/backward."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError


class Pad:
    def __init__(self, p):
        self.p = p

    def forward(self, x):
        p = self.p
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))), None

    def backward(self, g, _):
        p = self.p
        return g[:, :, p:-p, p:-p] if p else g, []

    def params(self):
        return []

    def spec(self):
        return {"type": "pad", "p": self.p}


class Conv2D:
    """Stride 1, valid padding. ``weights`` is (filters, channels, k, k)."""

    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    @classmethod
    def init(cls, filters, channels, k, rng):
        bound = math.sqrt(6.0 / (channels * k * k))
        return cls(rng.uniform(-bound, bound, (filters, channels, k, k)), np.zeros(filters))

    def forward(self, x):
        F, C, k, _ = self.weights.shape
        if x.shape[1] != C:
            raise ContractError(f"conv expects {C} channels, got {x.shape[1]}")
        N, _, H, W = x.shape
        Ho, Wo = H - k + 1, W - k + 1
        cols = sliding_window_view(x, (k, k), axis=(2, 3))  # N, C, Ho, Wo, k, k
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
        out = cols @ self.weights.reshape(F, -1).T + self.bias
        return out.reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, g, cache):
        cols, xshape = cache
        F, C, k, _ = self.weights.shape
        N, _, H, W = xshape
        Ho, Wo = H - k + 1, W - k + 1
        g2 = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, F)
        dW = (g2.T @ cols).reshape(self.weights.shape)
        db = g2.sum(axis=0)
        dcols = (g2 @ self.weights.reshape(F, -1)).reshape(N, Ho, Wo, C, k, k)
        dx = np.zeros(xshape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + Ho, j:j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, [dW, db]

    def params(self):
        return [self.weights, self.bias]

    def spec(self):
        return {"type": "conv", "shape": list(self.weights.shape)}


class MaxPool2:
    def forward(self, x):
        N, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ContractError(f"2x2 pooling needs even spatial size, got {H}x{W}")
        blocks = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
        arg = np.argmax(blocks, axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, g, cache):
        arg, (N, C, H, W) = cache
        blocks = np.zeros((N, C, H // 2, W // 2, 4))
        np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
        dx = blocks.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return dx, []

    def params(self):
        return []

    def spec(self):
        return {"type": "maxpool2"}


class ReLU:
    def forward(self, x):
        return np.maximum(x, 0.0), x >= 0

    def backward(self, g, mask):
        return g * mask, []

    def params(self):
        return []

    def spec(self):
        return {"type": "relu"}


class Flatten:
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, shape):
        return g.reshape(shape), []

    def params(self):
        return []

    def spec(self):
        return {"type": "flatten"}


class Dense:
    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    @classmethod
    def init(cls, i, o, rng):
        bound = math.sqrt(6.0 / i)
        return cls(rng.uniform(-bound, bound, (o, i)), np.zeros(o))

    def forward(self, x):
        return x @ self.weights.T + self.bias, x

    def backward(self, g, x):
        return g @ self.weights, [g.T @ x, g.sum(axis=0)]

    def params(self):
        return [self.weights, self.bias]

    def spec(self):
        return {"type": "dense", "shape": list(self.weights.shape)}


_LAYER_TYPES = {"pad": Pad, "conv": Conv2D, "maxpool2": MaxPool2, "relu": ReLU, "flatten": Flatten, "dense": Dense}


class ConvTeacher:
    """Sequential conv net over flattened ``(channels, H, W)`` images, softmax-classifier head."""

    def __init__(self, layers, input_shape=(1, 28, 28)):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        probe = np.zeros((1,) + self.input_shape)
        try:
            out = self._run(probe)[0]
        except (ValueError, ContractError) as e:
            raise ContractError(f"layer shapes do not chain for input {self.input_shape}: {e}") from e
        self.output_dim = out.shape[1]
        self.input_dim = int(np.prod(self.input_shape))

    def _run(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def _reshape(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.ndim == 2:
            if batch.shape[1] != int(np.prod(self.input_shape)):
                raise ContractError(f"expected {np.prod(self.input_shape)} features, got {batch.shape[1]}")
            batch = batch.reshape((-1,) + self.input_shape)
        return batch

    def forward(self, batch):
        return self._run(self._reshape(batch))[0]

    __call__ = forward

    def predict(self, batch):
        return np.argmax(self.forward(batch), axis=1)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def gradients(self, batch, grad_out_fn):
        x, caches = self._run(self._reshape(batch))
        g = grad_out_fn(x)
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            g, pg = layer.backward(g, c)
            grads = pg + grads
        return x, grads, g

    def loss_and_grads(self, batch, labels, loss, teacher_logits=None, batch_index=None):
        holder = {}

        def grad_out(logits):
            holder["value"], g = loss.value_and_grad(logits, labels, teacher_logits, batch_index)
            return g

        logits, grads, _ = self.gradients(batch, grad_out)
        return holder["value"], grads, logits

    def copy(self):
        return copy.deepcopy(self)

    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        h.update(json.dumps([l.spec() for l in self.layers]).encode())
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.digest()

    def save(self, path):
        arrays = {f"p{i}": p for i, p in enumerate(self.params())}
        meta = json.dumps({"layers": [l.spec() for l in self.layers], "input_shape": self.input_shape})
        with open(path, "wb") as f:
            np.savez(f, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path):
        z = np.load(path)
        meta = json.loads(z["__meta__"].tobytes().decode())
        layers, k = [], 0
        for spec in meta["layers"]:
            t = spec["type"]
            if t in ("conv", "dense"):
                layers.append(_LAYER_TYPES[t](z[f"p{k}"], z[f"p{k + 1}"]))
                k += 2
            elif t == "pad":
                layers.append(Pad(spec["p"]))
            else:
                layers.append(_LAYER_TYPES[t]())
        return cls(layers, meta["input_shape"])


def lenet(num_classes=10, seed=0, input_hw=28, pad=2) -> ConvTeacher:
    """conv6@5x5 - pool - conv16@5x5 - pool - 120 - 84 - classes, relu throughout."""
    rng = np.random.default_rng(seed)
    side = input_hw + 2 * pad
    s = ((side - 4) // 2 - 4) // 2
    layers = []
    if pad:
        layers.append(Pad(pad))
    layers += [
        Conv2D.init(6, 1, 5, rng), ReLU(), MaxPool2(),
        Conv2D.init(16, 6, 5, rng), ReLU(), MaxPool2(),
        Flatten(),
        Dense.init(16 * s * s, 120, rng), ReLU(),
        Dense.init(120, 84, rng), ReLU(),
        Dense.init(84, num_classes, rng),
    ]
    return ConvTeacher(layers, (1, input_hw, input_hw))
