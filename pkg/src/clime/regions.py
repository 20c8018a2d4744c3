"""Exact local explanations of piecewise-linear networks.

Inside the region where every hidden neuron stays on the same linear piece
of its activation, the network is a single affine map. This module finds
that piece assignment for a query point, composes the affine map, and
writes down the region as a set of halfspaces.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .errors import ContractError
from .nn import Network


def activation_pieces(act: Activation):
    """``(slopes, intercepts, lo, hi)`` arrays describing each linear piece."""
    if act.kind == "relu":
        return (np.array([0.0, 1.0]), np.array([0.0, 0.0]),
                np.array([-np.inf, 0.0]), np.array([0.0, np.inf]))
    if act.kind == "identity":
        return np.ones(1), np.zeros(1), np.array([-np.inf]), np.array([np.inf])
    if act.kind == "pwl":
        lo, hi = act.pwl.piece_bounds()
        return act.pwl.slopes, act.pwl.intercepts, lo, hi
    raise ContractError(f"{act.kind} is not piecewise-linear; linearize the network first")


def _segments(act: Activation, z):
    if act.kind == "relu":
        return (z >= 0).astype(np.int64)
    if act.kind == "identity":
        return np.zeros(z.shape, dtype=np.int64)
    if act.kind == "pwl":
        return act.pwl.segment(z).astype(np.int64)
    raise ContractError(f"{act.kind} is not piecewise-linear; linearize the network first")


class ActivationPattern:
    """Segment index of every hidden neuron, one int array per hidden layer."""

    def __init__(self, segments):
        self.segments = tuple(np.asarray(s, dtype=np.int64) for s in segments)

    def flat(self):
        if not self.segments:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self.segments)

    def key(self) -> bytes:
        return self.flat().tobytes()

    def digest(self) -> str:
        return hashlib.sha1(self.key()).hexdigest()

    def __getitem__(self, idx):
        layer, unit = idx
        return int(self.segments[layer][unit])

    def __eq__(self, other):
        return isinstance(other, ActivationPattern) and len(self.segments) == len(other.segments) \
            and all(np.array_equal(a, b) for a, b in zip(self.segments, other.segments))

    def __hash__(self):
        return hash(self.key())

    def as_dict(self):
        return {f"{l}.{u}": int(s) for l, seg in enumerate(self.segments) for u, s in enumerate(seg)}

    def __repr__(self):
        return f"ActivationPattern({[s.tolist() for s in self.segments]})"


@dataclass
class AffineMap:
    W_eff: np.ndarray  # (output_dim, input_dim)
    b_eff: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x @ self.W_eff.T + self.b_eff


@dataclass
class Polytope:
    """``{x : A x <= d}``; zero rows means the whole space."""

    A: np.ndarray
    d: np.ndarray

    @classmethod
    def whole_space(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self):
        return self.A.shape[1]

    def slack(self, x):
        """``d - A x`` per row; negative means violated."""
        x = np.asarray(x, dtype=np.float64)
        return self.d - x @ self.A.T

    def contains(self, x, tol=1e-9):
        s = self.slack(x)
        return np.all(s >= -tol, axis=-1)

    def intersect(self, other):
        return Polytope(np.vstack([self.A, other.A]), np.concatenate([self.d, other.d]))


@dataclass
class RegionExplanation:
    pattern: ActivationPattern
    affine: AffineMap
    region: Polytope
    anchor: np.ndarray

    def to_dict(self):
        return {
            "anchor": self.anchor.tolist(),
            "pattern": self.pattern.as_dict(),
            "W_eff": self.affine.W_eff.tolist(),
            "b_eff": self.affine.b_eff.tolist(),
            "polytope": {"A": self.region.A.tolist(), "d": self.region.d.tolist()},
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def pattern_matrix(plnn: Network, X):
    """Segment index of every hidden neuron for every row of ``X``: (N, hidden)."""
    h = plnn._check_input(X)
    cols = []
    for layer in plnn.hidden_layers:
        z = h @ layer.weights.T + layer.bias
        cols.append(_segments(layer.activation, z))
        h = layer.activation(z)
    if not cols:
        return np.zeros((h.shape[0], 0), dtype=np.int64)
    return np.hstack(cols)


def split_pattern(plnn: Network, flat) -> ActivationPattern:
    sizes = [l.out_dim for l in plnn.hidden_layers]
    return ActivationPattern(np.split(np.asarray(flat), np.cumsum(sizes)[:-1]) if sizes else [])


def activation_pattern(plnn: Network, x) -> ActivationPattern:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(x)):
        raise ContractError("query point must be finite")
    return split_pattern(plnn, pattern_matrix(plnn, x)[0])


def _compose(plnn: Network, pattern: ActivationPattern, want_polytope: bool):
    hidden = plnn.hidden_layers
    if len(pattern.segments) != len(hidden):
        raise ContractError(
            f"pattern has {len(pattern.segments)} layers, network has {len(hidden)} hidden layers")
    d = plnn.input_dim
    M = np.eye(d)
    c = np.zeros(d)
    rows, rhs = [], []
    for li, layer in enumerate(hidden):
        seg = pattern.segments[li]
        if seg.shape[0] != layer.out_dim:
            raise ContractError(f"pattern layer {li} has {seg.shape[0]} units, expected {layer.out_dim}")
        slopes, intercepts, lo, hi = activation_pieces(layer.activation)
        if seg.size and (seg.min() < 0 or seg.max() >= slopes.size):
            raise ContractError(f"pattern layer {li} has a segment index outside [0, {slopes.size})")
        A = layer.weights @ M
        z0 = layer.weights @ c + layer.bias
        if want_polytope:
            l, h = lo[seg], hi[seg]
            for u in range(layer.out_dim):
                # lo <= a.x + z0 and a.x + z0 <= hi
                if np.isfinite(l[u]):
                    rows.append(-A[u])
                    rhs.append(z0[u] - l[u])
                if np.isfinite(h[u]):
                    rows.append(A[u])
                    rhs.append(h[u] - z0[u])
        s = slopes[seg]
        M = s[:, None] * A
        c = s * z0 + intercepts[seg]
    out = plnn.layers[-1]
    affine = AffineMap(out.weights @ M, out.weights @ c + out.bias)
    if not want_polytope:
        return affine, None
    if not rows:
        return affine, Polytope.whole_space(d)
    A = np.array(rows)
    b = np.array(rhs)
    norms = np.linalg.norm(A, axis=1)
    # rows with a zero normal are constant constraints, true at any realized point
    keep = norms > 0
    return affine, Polytope(A[keep] / norms[keep, None], b[keep] / norms[keep])


def region_affine(plnn: Network, pattern: ActivationPattern) -> AffineMap:
    return _compose(plnn, pattern, want_polytope=False)[0]


def region_polytope(plnn: Network, pattern: ActivationPattern) -> Polytope:
    return _compose(plnn, pattern, want_polytope=True)[1]


def explain(plnn: Network, x, prune=False) -> RegionExplanation:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    pattern = activation_pattern(plnn, x)
    affine, region = _compose(plnn, pattern, want_polytope=True)
    if prune:
        from .lp import prune_redundant

        region = prune_redundant(region)
    return RegionExplanation(pattern, affine, region, x.copy())


def sample_interior(region: Polytope, start, count, rng, slack=1e-7, radius=1.0, burn=20):
    """Hit-and-run samples from ``region`` intersected with a box around ``start``.

    Every returned point satisfies each constraint with at least ``slack``.
    ``start`` must already satisfy that margin.
    """
    x = np.asarray(start, dtype=np.float64).copy()
    dim = x.size
    box = Polytope(np.vstack([np.eye(dim), -np.eye(dim)]),
                   np.concatenate([x + radius, radius - x]))
    P = region.intersect(box)
    out = []
    steps = 0
    while len(out) < count:
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        au = P.A @ u
        room = P.d - P.A @ x - slack
        with np.errstate(divide="ignore", invalid="ignore"):
            t = room / au
        t_hi = np.min(t[au > 1e-15], initial=np.inf)
        t_lo = np.max(t[au < -1e-15], initial=-np.inf)
        if not t_lo < t_hi:
            steps += 1
            if steps > 100 * (count + burn):
                break
            continue
        x = x + rng.uniform(t_lo, t_hi) * u
        steps += 1
        if steps > burn:
            out.append(x.copy())
    return np.array(out).reshape(-1, dim)
