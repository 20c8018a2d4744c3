"""Activation functions and their closed-form derivatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ContractError

SMOOTH_KINDS = ("sigmoid", "tanh", "elu")
KINDS = ("identity", "relu", "sigmoid", "tanh", "elu", "pwl")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def elu(z, alpha=1.0):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0, z, alpha * np.expm1(np.minimum(z, 0.0)))


@dataclass(frozen=True, eq=False)
class Activation:
    """Tagged activation. ``pwl`` carries a :class:`~clime.pwl.PiecewiseLinearFn`."""

    kind: str
    alpha: float = 1.0
    pwl: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown activation kind {self.kind!r}")
        if self.kind == "elu" and not self.alpha > 0:
            raise ContractError(f"elu alpha must be > 0, got {self.alpha}")
        if self.kind == "pwl" and self.pwl is None:
            raise ContractError("pwl activation needs a PiecewiseLinearFn payload")

    @property
    def is_piecewise_linear(self):
        return self.kind in ("identity", "relu", "pwl")

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "identity":
            return z.copy()
        if k == "relu":
            return np.maximum(z, 0.0)
        if k == "sigmoid":
            return sigmoid(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "elu":
            return elu(z, self.alpha)
        return self.pwl(z)

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "identity":
            return np.ones_like(z)
        if k == "relu":
            # z == 0 belongs to the right (slope 1) piece
            return (z >= 0).astype(np.float64)
        if k == "sigmoid":
            s = sigmoid(z)
            return s * (1.0 - s)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "elu":
            return np.where(z > 0, 1.0, self.alpha * np.exp(np.minimum(z, 0.0)))
        return self.pwl.slope_at(z)

    def to_dict(self):
        if self.kind == "elu":
            return {"kind": "elu", "alpha": self.alpha}
        if self.kind == "pwl":
            return self.pwl.to_dict()
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "pwl":
            from .pwl import PiecewiseLinearFn

            return cls("pwl", pwl=PiecewiseLinearFn.from_dict(d))
        if kind == "elu":
            return cls("elu", alpha=float(d.get("alpha", 1.0)))
        return cls(kind)

    def __repr__(self):
        if self.kind == "elu":
            return f"Activation('elu', alpha={self.alpha})"
        if self.kind == "pwl":
            return f"Activation('pwl', n={self.pwl.n}, source={self.pwl.source.kind})"
        return f"Activation({self.kind!r})"


def parse_activation(name: str) -> Activation:
    """Parse ``relu``, ``tanh``, ``elu`` or ``elu:0.5`` style names."""
    name = name.strip().lower()
    if name.startswith("elu"):
        _, _, alpha = name.partition(":")
        return Activation("elu", alpha=float(alpha) if alpha else 1.0)
    return Activation(name)


IDENTITY = Activation("identity")
RELU = Activation("relu")
