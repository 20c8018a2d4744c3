"""DecisionNet: one wide layer of boundary hyperplanes plus a sign-pattern lookup table."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import BoundaryPiece, unique_planes
from .errors import ContractError
from .nn import Network


@dataclass
class DNet:
    planes: np.ndarray  # (m, d), unit rows
    offsets: np.ndarray  # (m,)
    table: dict  # bitstring -> label
    fallback: Network | None
    stats: dict = field(default_factory=lambda: {"hits": 0, "misses": 0, "conflicts": 0})
    fallback_path: str | None = None

    @property
    def width(self):
        return self.planes.shape[0]

    def states(self, X):
        """(N, m) 0/1 matrix; 1 where ``plane.x + offset >= 0``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (X @ self.planes.T + self.offsets >= 0).astype(np.uint8)

    def to_dict(self):
        return {
            "planes": self.planes.tolist(),
            "offsets": self.offsets.tolist(),
            "table": dict(sorted(self.table.items())),
            "fallback_model": self.fallback_path,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path, fallback: Network | None = None):
        d = json.loads(Path(path).read_text())
        if fallback is None and d.get("fallback_model"):
            fallback = Network.load(d["fallback_model"])
        return cls(np.asarray(d["planes"], dtype=np.float64).reshape(len(d["offsets"]), -1),
                   np.asarray(d["offsets"], dtype=np.float64),
                   {k: int(v) for k, v in d["table"].items()}, fallback,
                   fallback_path=d.get("fallback_model"))


def _key(bits) -> str:
    return "".join("1" if b else "0" for b in bits)


def build_dnet(pieces: list[BoundaryPiece], X, y=None, original: Network | None = None,
               label_source="model", fallback_path=None) -> DNet:
    """Compile boundary pieces into a DNet and label its states from training data.

    With ``label_source="model"`` every training sample is labelled by the
    original network's prediction, so conflict-free states reproduce the
    network exactly; ``"labels"`` uses the dataset labels ``y`` instead.
    Mixed states take the majority label, ties toward the lower class.
    """
    planes = unique_planes(pieces)
    if not planes:
        raise ContractError("no boundary found; cannot build a DNet")
    W = np.array([p.normal for p in planes])
    b = np.array([p.offset for p in planes])
    X = np.asarray(X, dtype=np.float64)
    if label_source == "model":
        if original is None:
            raise ContractError("label_source='model' needs the original network")
        lab = original.predict(X)
    elif label_source == "labels":
        if y is None:
            raise ContractError("label_source='labels' needs training labels")
        lab = np.asarray(y, dtype=np.int64)
    else:
        raise ContractError(f"unknown label_source {label_source!r}")

    net = DNet(W, b, {}, original, fallback_path=fallback_path)
    votes: dict[str, Counter] = {}
    for bits, l in zip(net.states(X), lab):
        votes.setdefault(_key(bits), Counter())[int(l)] += 1
    conflicts = 0
    for k, cnt in votes.items():
        top = max(cnt.values())
        net.table[k] = min(c for c, v in cnt.items() if v == top)
        if len(cnt) > 1:
            conflicts += 1
    net.stats["conflicts"] = conflicts
    net.stats["states"] = len(votes)
    return net


def dnet_state(dnet: DNet, x) -> str:
    """Bitstring of which side of each plane ``x`` lies on."""
    return _key(dnet.states(np.asarray(x).reshape(1, -1))[0])


def dnet_predict(dnet: DNet, x):
    """``(label, "table" | "fallback")``; a miss is answered by the original net and cached."""
    key = dnet_state(dnet, x)
    if key in dnet.table:
        dnet.stats["hits"] += 1
        return dnet.table[key], "table"
    if dnet.fallback is None:
        raise ContractError(f"state {key} unseen and no fallback network attached")
    label = int(dnet.fallback.predict(np.asarray(x).reshape(1, -1))[0])
    dnet.table[key] = label
    dnet.stats["misses"] += 1
    return label, "fallback"


def dnet_predict_batch(dnet: DNet, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.empty(len(X), dtype=np.int64)
    sources = []
    for i, bits in enumerate(dnet.states(X)):
        key = _key(bits)
        if key in dnet.table:
            dnet.stats["hits"] += 1
            labels[i] = dnet.table[key]
            sources.append("table")
        else:
            labels[i], src = dnet_predict(dnet, X[i])
            sources.append(src)
    return labels, sources


def dnet_agreement(dnet: DNet, original: Network, X) -> float:
    pred, _ = dnet_predict_batch(dnet, X)
    return float(np.mean(pred == original.predict(X)))


def dnet_accuracy(dnet: DNet, X, y) -> float:
    pred, _ = dnet_predict_batch(dnet, X)
    return float(np.mean(pred == np.asarray(y)))


def audit(dnet: DNet, pieces) -> bool:
    """Every DNet row is bit-equal to some boundary piece's hyperplane."""
    for w, b in zip(dnet.planes, dnet.offsets):
        if not any(np.array_equal(w, p.plane.normal) and b == p.plane.offset for p in pieces):
            return False
    return True
