"""A small deterministic float64 neural-network engine.

Dense layers only. Models expose ``params()`` and ``loss_and_grads()`` so the
same :func:`train` loop also drives the convolutional teacher in
:mod:`clime.distill`.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import IDENTITY, Activation
from .errors import ContractError, NumericError

log = logging.getLogger(__name__)


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation = IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.bias.shape[0] != self.weights.shape[0]:
            raise ContractError(
                f"bias length {self.bias.shape[0]} does not match weights {self.weights.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ContractError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


def init_layer(in_dim, out_dim, activation: Activation, rng) -> DenseLayer:
    """Kaiming-uniform for relu/elu, Xavier-uniform otherwise; zero bias."""
    if activation.kind in ("relu", "elu"):
        bound = math.sqrt(6.0 / in_dim)
    else:
        bound = math.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


def parse_arch(arch: str) -> list[int]:
    parts = arch.strip().split("-")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise ContractError(f"architecture must look like d0-d1-...-dk, got {arch!r}") from None
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ContractError(f"architecture must look like d0-d1-...-dk, got {arch!r}")
    return dims


class Network:
    """A stack of dense layers; the last layer emits logits."""

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ContractError("a network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise ContractError(
                    f"layer {i} expects {self.layers[i].in_dim} inputs but layer {i - 1} "
                    f"emits {self.layers[i - 1].out_dim}")
        if self.layers[-1].activation.kind != "identity":
            raise ContractError("output layer activation must be identity (logits)")

    @classmethod
    def mlp(cls, dims, activation: Activation, seed=0):
        if isinstance(dims, str):
            dims = parse_arch(dims)
        rng = np.random.default_rng(seed)
        layers = []
        for i in range(len(dims) - 1):
            act = activation if i < len(dims) - 2 else IDENTITY
            layers.append(init_layer(dims[i], dims[i + 1], act, rng))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def hidden_layers(self):
        return self.layers[:-1]

    def copy(self):
        return copy.deepcopy(self)

    def _check_input(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.shape[1] != self.input_dim:
            raise ContractError(
                f"layer 0 expects {self.input_dim} inputs, batch has {batch.shape[1]} columns")
        return batch

    def forward(self, batch):
        h = self._check_input(batch)
        for layer in self.layers:
            h = layer.activation(h @ layer.weights.T + layer.bias)
        return h

    __call__ = forward

    def predict(self, batch):
        # np.argmax returns the first maximum, i.e. ties go to the lower class
        return np.argmax(self.forward(batch), axis=1)

    def trace(self, batch):
        """Forward pass keeping every layer input and pre-activation."""
        h = self._check_input(batch)
        inputs, pres = [], []
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weights.T + layer.bias
            pres.append(z)
            h = layer.activation(z)
        return inputs, pres, h

    def backprop(self, inputs, pres, grad_out):
        """Chain ``dL/dlogits`` back through the layers; returns (dWs, dbs, dx)."""
        g = grad_out
        dws, dbs = [None] * len(self.layers), [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = g * layer.activation.derivative(pres[i])
            dws[i] = g.T @ inputs[i]
            dbs[i] = g.sum(axis=0)
            g = g @ layer.weights
        return dws, dbs, g

    # training protocol -------------------------------------------------
    def params(self):
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def loss_and_grads(self, batch, labels, loss, teacher_logits=None, batch_index=None):
        inputs, pres, logits = self.trace(batch)
        value, g = loss.value_and_grad(logits, labels, teacher_logits, batch_index)
        dws, dbs, _ = self.backprop(inputs, pres, g)
        grads = []
        for dw, db in zip(dws, dbs):
            grads.extend([dw, db])
        return value, grads, logits

    # serialization -----------------------------------------------------
    def to_dict(self):
        return {"layers": [{
            "rows": l.out_dim,
            "cols": l.in_dim,
            "weights": l.weights.reshape(-1).tolist(),
            "bias": l.bias.tolist(),
            "activation": l.activation.to_dict(),
        } for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        layers = []
        for i, ld in enumerate(d["layers"]):
            w = np.asarray(ld["weights"], dtype=np.float64)
            if w.size != ld["rows"] * ld["cols"]:
                raise ContractError(f"layer {i}: weights length {w.size} != rows*cols")
            layers.append(DenseLayer(w.reshape(ld["rows"], ld["cols"]), ld["bias"],
                                     Activation.from_dict(ld["activation"])))
        return cls(layers)

    def save(self, path):
        # float repr is the shortest string that round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self):
        dims = [self.input_dim] + [l.out_dim for l in self.layers]
        acts = ",".join(l.activation.kind for l in self.hidden_layers)
        return f"Network({'-'.join(map(str, dims))}, [{acts}])"


# losses -----------------------------------------------------------------

def log_softmax(logits, temperature=1.0):
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits, temperature=1.0):
    return np.exp(log_softmax(logits, temperature))


def _labels(labels, n, c):
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if labels.shape[0] != n:
        raise ContractError(f"{labels.shape[0]} labels for a batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    return labels


def cross_entropy(logits, labels) -> float:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _labels(labels, logits.shape[0], logits.shape[1])
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(labels)), labels].mean())


def kd_kl(student_logits, teacher_logits, temperature) -> float:
    """Mean ``KL(softmax(teacher/T) || softmax(student/T))``."""
    lt = log_softmax(teacher_logits, temperature)
    ls = log_softmax(student_logits, temperature)
    return float((np.exp(lt) * (lt - ls)).sum(axis=1).mean())


def kd_loss(student_logits, teacher_logits, labels, alpha, temperature) -> float:
    """``alpha * CE + (1 - alpha) * T^2 * KL``."""
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    if s.shape != t.shape:
        raise ContractError(f"student {s.shape} and teacher {t.shape} logits differ in shape")
    if not (0.0 <= alpha <= 1.0) or not temperature > 0:
        raise ContractError(f"need alpha in [0,1] and temperature > 0, got {alpha}, {temperature}")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise NumericError("non-finite logits passed to kd_loss")
    ce = cross_entropy(s, labels)
    if alpha == 1.0:
        return ce
    return alpha * ce + (1.0 - alpha) * temperature ** 2 * kd_kl(s, t, temperature)


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cross_entropy"  # or "kd"
    alpha: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "kd"):
            raise ContractError(f"unknown loss {self.kind!r}")
        if self.kind == "kd" and (not 0.0 <= self.alpha <= 1.0 or not self.temperature > 0):
            raise ContractError("kd loss needs alpha in [0,1] and temperature > 0")

    def value_and_grad(self, logits, labels, teacher_logits=None, batch_index=None):
        n, c = logits.shape
        labels = _labels(labels, n, c)
        p = softmax(logits)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), labels] = 1.0
        if self.kind == "cross_entropy" or self.alpha == 1.0:
            value = cross_entropy(logits, labels)
            grad = (p - onehot) / n
        else:
            if teacher_logits is None:
                raise ContractError("kd loss needs teacher logits")
            T, a = self.temperature, self.alpha
            value = kd_loss(logits, teacher_logits, labels, a, T)
            qs = softmax(logits, T)
            qt = softmax(teacher_logits, T)
            grad = (a * (p - onehot) + (1.0 - a) * T * (qs - qt)) / n
        if not math.isfinite(value):
            where = f" in batch {batch_index}" if batch_index is not None else ""
            raise NumericError(f"non-finite loss{where}")
        return value, grad


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray


def backward(net: Network, batch, labels, loss_spec: LossSpec = LossSpec(),
             teacher_logits=None, batch_index=None) -> Gradients:
    """Gradients of the batch-mean loss w.r.t. every parameter and the input."""
    inputs, pres, logits = net.trace(batch)
    _, g = loss_spec.value_and_grad(logits, labels, teacher_logits, batch_index)
    dws, dbs, dx = net.backprop(inputs, pres, g)
    return Gradients(dws, dbs, dx)


def forward(net: Network, batch):
    return net.forward(batch)


def input_gradient(net: Network, x, class_index: int):
    """``d logit[class_index] / dx`` for each row of ``x``."""
    inputs, pres, logits = net.trace(x)
    if not 0 <= class_index < net.output_dim:
        raise ContractError(f"class index {class_index} outside [0, {net.output_dim})")
    g = np.zeros_like(logits)
    g[:, class_index] = 1.0
    return net.backprop(inputs, pres, g)[2]


def saliency(net: Network, x, class_index: int):
    """Gradient-times-input attribution map for one class."""
    x = np.asarray(x, dtype=np.float64)
    grad = input_gradient(net, x, class_index)
    return (grad * np.atleast_2d(x)).reshape(x.shape)


# optimizers and training ----------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: LossSpec = field(default_factory=LossSpec)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


class SGD:
    def __init__(self, params, lr):
        self.params, self.lr = params, lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)


def batched_logits(model, X, batch_size=2048):
    X = np.asarray(X, dtype=np.float64)
    if len(X) <= batch_size:
        return model.forward(X)
    return np.concatenate([model.forward(X[i:i + batch_size]) for i in range(0, len(X), batch_size)])


def accuracy(model, X, y) -> float:
    pred = np.argmax(batched_logits(model, X), axis=1)
    return float(np.mean(pred == np.asarray(y)))


def train(model, X, y, config: TrainConfig, teacher_logits=None, on_epoch=None):
    """Mini-batch training on a copy of ``model``.

    Returns ``(trained_model, history)`` where history holds one dict per
    epoch with the mean loss and training accuracy. ``on_epoch(model, record)``
    may add extra entries to the record.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if len(X) == 0 or len(X) != len(y):
        raise ContractError("training set must be nonempty with one label per row")
    if config.loss.kind == "kd" and config.loss.alpha < 1.0:
        if teacher_logits is None or len(teacher_logits) != len(X):
            raise ContractError("kd training needs one teacher logit row per sample")
    model = copy.deepcopy(model)
    opt = make_optimizer(model.params(), config)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, len(X), config.batch_size)):
            idx = order[start:start + config.batch_size]
            tl = teacher_logits[idx] if teacher_logits is not None else None
            try:
                value, grads, logits = model.loss_and_grads(X[idx], y[idx], config.loss, tl, b)
            except NumericError as e:
                raise NumericError(f"training diverged at epoch {epoch}: {e}") from e
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericError(f"training diverged at epoch {epoch}, batch {b}: non-finite gradient")
            opt.step(grads)
            total += value * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
        record = {"epoch": epoch + 1, "loss": total / len(X), "accuracy": correct / len(X)}
        if on_epoch is not None:
            on_epoch(model, record)
        log.info("epoch %d loss %.5f acc %.4f", epoch + 1, record["loss"], record["accuracy"])
        history.append(record)
    return model, history
