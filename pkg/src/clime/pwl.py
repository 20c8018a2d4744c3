"""Piecewise-linear approximation of smooth activations by tangent insertion.

A smooth activation is first replaced by its asymptotes (the "hard"
version). Tangent lines are then added one at a time, each at the point
where the current approximation is worst on a dense grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .errors import ContractError, NumericError

DEFAULT_DOMAIN = (-20.0, 20.0)
DEFAULT_GRID_POINTS = 400001

# errors within this of the maximum count as ties (resolved toward min x)
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Line:
    slope: float
    intercept: float
    tangency_x: float  # -inf / +inf for asymptotes

    def __call__(self, x):
        return self.slope * x + self.intercept


def _encode_ext(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _decode_ext(v):
    return float(v)


class PiecewiseLinearFn:
    """Continuous (for n >= 3) piecewise-linear function of one variable.

    Piece ``i`` is ``lines[i]`` on ``[breakpoints[i-1], breakpoints[i])``;
    a point exactly on a breakpoint belongs to the piece on its right.
    """

    def __init__(self, lines, breakpoints, source: Activation):
        lines = tuple(lines)
        bps = np.asarray(breakpoints, dtype=np.float64).reshape(-1)
        if len(lines) < 1 or bps.size != len(lines) - 1:
            raise ContractError(
                f"need len(breakpoints) == len(lines) - 1, got {bps.size} and {len(lines)}")
        if bps.size and not np.all(np.diff(bps) > 0):
            raise ContractError(f"breakpoints not strictly increasing: {bps.tolist()}")
        self.lines = lines
        self.breakpoints = bps
        self.source = source
        self.slopes = np.array([l.slope for l in lines])
        self.intercepts = np.array([l.intercept for l in lines])

    @property
    def n(self):
        return len(self.lines)

    def segment(self, x):
        return np.searchsorted(self.breakpoints, np.asarray(x, dtype=np.float64), side="right")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx = self.segment(x)
        return self.slopes[idx] * x + self.intercepts[idx]

    def slope_at(self, x):
        return self.slopes[self.segment(x)]

    def piece_bounds(self):
        """Per-piece ``(lo, hi)`` arrays, with -inf/+inf at the ends."""
        lo = np.concatenate([[-np.inf], self.breakpoints])
        hi = np.concatenate([self.breakpoints, [np.inf]])
        return lo, hi

    def to_dict(self):
        return {
            "kind": "pwl",
            "source": self.source.to_dict(),
            "lines": [[l.slope, l.intercept, _encode_ext(l.tangency_x)] for l in self.lines],
            "breakpoints": self.breakpoints.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        lines = [Line(float(s), float(b), _decode_ext(t)) for s, b, t in d["lines"]]
        return cls(lines, d["breakpoints"], Activation.from_dict(d["source"]))

    def __repr__(self):
        return f"PiecewiseLinearFn(n={self.n}, source={self.source!r}, breakpoints={self.breakpoints.tolist()})"


def n0(kind: Activation) -> int:
    return len(asymptote_lines(kind))


def asymptote_lines(kind: Activation) -> list[Line]:
    """The asymptotes of a smooth activation, ordered left to right."""
    k = kind.kind
    if k == "sigmoid":
        return [Line(0.0, 0.0, -math.inf), Line(0.0, 1.0, math.inf)]
    if k == "tanh":
        return [Line(0.0, -1.0, -math.inf), Line(0.0, 1.0, math.inf)]
    if k == "elu":
        return [Line(0.0, -kind.alpha, -math.inf), Line(1.0, 0.0, math.inf)]
    raise ContractError(f"{k} is already piecewise-linear; nothing to approximate")


def tangent_line(kind: Activation, x: float) -> Line:
    x = float(x)
    slope = float(kind.derivative(np.array([x]))[0])
    value = float(kind(np.array([x]))[0])
    return Line(slope, value - slope * x, x)


def stitch(lines, kind: Activation) -> PiecewiseLinearFn:
    """Order lines by tangency and put breakpoints at consecutive intersections.

    Two parallel horizontal asymptotes (the bare sigmoid/tanh case) have no
    intersection; they are joined by a step at the inflection point 0.
    """
    lines = sorted(lines, key=lambda l: l.tangency_x)
    bps = []
    for a, b in zip(lines[:-1], lines[1:]):
        ds = a.slope - b.slope
        if ds == 0.0:
            if len(lines) == 2 and kind.kind in ("sigmoid", "tanh"):
                bps.append(0.0)
                continue
            raise NumericError(
                f"adjacent lines at tangency {a.tangency_x} and {b.tangency_x} are parallel; "
                "cannot place a breakpoint")
        bps.append((b.intercept - a.intercept) / ds)
    bps = np.array(bps)
    if bps.size > 1 and not np.all(np.diff(bps) > 0):
        raise NumericError(f"stitched breakpoints are not increasing: {bps.tolist()}")
    return PiecewiseLinearFn(lines, bps, kind)


def _grid(domain, grid_points):
    lo, hi = float(domain[0]), float(domain[1])
    # built from exact integer ratios so the grid is mirror-symmetric about its midpoint
    t = (2.0 * np.arange(grid_points) - (grid_points - 1)) / (grid_points - 1)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * t


def sup_error_argmax(sigma, p, domain=DEFAULT_DOMAIN, grid_points=DEFAULT_GRID_POINTS):
    """Smallest grid point attaining ``max |sigma(x) - p(x)|``, and that maximum."""
    lo, hi = domain
    if not lo < hi:
        raise ContractError(f"empty domain [{lo}, {hi}]")
    if grid_points < 1001:
        raise ContractError(f"grid_points must be >= 1001, got {grid_points}")
    xs = _grid(domain, grid_points)
    err = np.abs(sigma(xs) - p(xs))
    top = err.max()
    i = int(np.argmax(err >= top - _TIE_TOL))
    return float(xs[i]), float(top)


def build_pwl(kind: Activation, n: int, domain=DEFAULT_DOMAIN,
              grid_points=DEFAULT_GRID_POINTS) -> PiecewiseLinearFn:
    lines = asymptote_lines(kind)
    if n < len(lines):
        raise ContractError(f"n={n} is below the asymptote count {len(lines)} for {kind.kind}")
    p = stitch(lines, kind)
    for _ in range(n - len(lines)):
        x, _err = sup_error_argmax(kind, p, domain, grid_points)
        lines.append(tangent_line(kind, x))
        p = stitch(lines, kind)
    return p
