"""Decision boundaries of piecewise-linear networks.

Within one linear region two class logits are affine, so the set where they
tie is a hyperplane. A boundary piece is such a hyperplane restricted to a
region it actually crosses, certified by a Chebyshev-center LP.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, DegeneratePlaneError
from .lp import chebyshev_center
from .nn import Network
from .regions import AffineMap, Polytope, _compose, pattern_matrix, split_pattern

PLANE_TOL = 1e-9
MIN_RADIUS = 1e-9
DEDUP_TOL = 1e-6


@dataclass
class Hyperplane:
    """``{x : normal.x + offset = 0}`` with a unit normal; positive side favours class i."""

    normal: np.ndarray
    offset: float
    class_pair: tuple

    def value(self, x):
        return np.asarray(x, dtype=np.float64) @ self.normal + self.offset


@dataclass
class BoundaryPiece:
    plane: Hyperplane
    region: Polytope
    witness: np.ndarray
    pattern_digest: str = ""


def pairwise_plane(affine: AffineMap, i: int, j: int) -> Hyperplane:
    c = affine.W_eff.shape[0]
    if i == j or not (0 <= i < c and 0 <= j < c):
        raise ContractError(f"need two distinct classes in [0, {c}), got {i}, {j}")
    i, j = min(i, j), max(i, j)
    w = affine.W_eff[i] - affine.W_eff[j]
    norm = float(np.linalg.norm(w))
    if norm < 1e-12:
        raise DegeneratePlaneError(f"logits {i} and {j} are parallel in this region")
    return Hyperplane(w / norm, float(affine.b_eff[i] - affine.b_eff[j]) / norm, (i, j))


def feasible(region: Polytope, plane: Hyperplane, radius_cap=1.0):
    """A point on ``plane`` deep inside ``region``, or None if they do not meet.

    The ball is measured inside the plane: each row's ball term uses the
    component of its normal orthogonal to the plane normal.
    """
    n = plane.normal
    if region.dim != n.size:
        raise ContractError(f"region has {region.dim} columns, plane lives in {n.size} dims")
    A, d = region.A, region.d
    proj = A - np.outer(A @ n, n)
    ball = np.linalg.norm(proj, axis=1)
    A_all = np.vstack([A, n, -n])
    d_all = np.concatenate([d, [PLANE_TOL - plane.offset, PLANE_TOL + plane.offset]])
    ball_all = np.concatenate([ball, [0.0, 0.0]])
    x, r = chebyshev_center(A_all, d_all, radius_cap=radius_cap, ball_normals=ball_all)
    if x is None or r <= MIN_RADIUS:
        return None
    return x


def top_two(logits):
    order = np.argsort(-logits, kind="stable")
    return int(order[0]), int(order[1])


def enumerate_boundaries(plnn: Network, X, class_pairs=None) -> list[BoundaryPiece]:
    """Boundary pieces in every region realized by a row of ``X``.

    ``class_pairs=None`` tests the top-1/top-2 classes at each region's first
    sample; ``"all"`` tests every pair; a list of pairs tests exactly those.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ContractError("boundary enumeration needs a nonempty 2-D sample array")
    c = plnn.output_dim
    P = pattern_matrix(plnn, X)
    _, first = np.unique(P, axis=0, return_index=True)
    regions = []
    for idx in first:
        pat = split_pattern(plnn, P[idx])
        regions.append((pat.digest(), int(idx), pat))
    regions.sort(key=lambda r: r[0])

    logits = plnn.forward(X[[r[1] for r in regions]]) if regions else None
    pieces: list[BoundaryPiece] = []
    seen: dict[tuple, list[Hyperplane]] = {}
    for k, (digest, idx, pat) in enumerate(regions):
        affine, region = _compose(plnn, pat, want_polytope=True)
        if class_pairs is None:
            pairs = [tuple(sorted(top_two(logits[k])))]
        elif class_pairs == "all":
            pairs = [(i, j) for i in range(c) for j in range(i + 1, c)]
        else:
            pairs = sorted(tuple(sorted(p)) for p in class_pairs)
        for i, j in pairs:
            try:
                plane = pairwise_plane(affine, i, j)
            except DegeneratePlaneError:
                continue
            if any(_same_plane(plane, q) for q in seen.get((i, j), ())):
                continue
            w = feasible(region, plane)
            if w is None:
                continue
            seen.setdefault((i, j), []).append(plane)
            pieces.append(BoundaryPiece(plane, region, w, digest))
    return pieces


def _same_plane(a: Hyperplane, b: Hyperplane, tol=DEDUP_TOL):
    return np.max(np.abs(a.normal - b.normal)) <= tol and abs(a.offset - b.offset) <= tol


def unique_planes(pieces):
    out = []
    for p in pieces:
        if not any(p.plane.class_pair == q.class_pair and _same_plane(p.plane, q) for q in out):
            out.append(p.plane)
    return out


# 2-D tools -----------------------------------------------------------------

@dataclass
class GridResult:
    xs: np.ndarray  # cell-center x coordinates (resolution,)
    ys: np.ndarray
    labels: np.ndarray  # (resolution, resolution), labels[iy, ix]
    boundary: np.ndarray  # bool mask, same shape

    @property
    def cell(self):
        return float(self.xs[1] - self.xs[0])

    def boundary_points(self):
        iy, ix = np.nonzero(self.boundary)
        return np.column_stack([self.xs[ix], self.ys[iy]])


def grid_boundary_2d(net, bbox, resolution=512) -> GridResult:
    """Label cell centers by argmax; a cell is on the boundary if a 4-neighbour differs."""
    if getattr(net, "input_dim", 2) != 2:
        raise ContractError("grid oracle needs a 2-D input network")
    if resolution < 64:
        raise ContractError(f"resolution must be >= 64, got {resolution}")
    x0, y0, x1, y1 = map(float, bbox)
    hx = (x1 - x0) / resolution
    hy = (y1 - y0) / resolution
    xs = x0 + hx * (np.arange(resolution) + 0.5)
    ys = y0 + hy * (np.arange(resolution) + 0.5)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    labels = np.argmax(net.forward(pts), axis=1).reshape(resolution, resolution)
    b = np.zeros_like(labels, dtype=bool)
    dx = labels[:, 1:] != labels[:, :-1]
    dy = labels[1:, :] != labels[:-1, :]
    b[:, 1:] |= dx
    b[:, :-1] |= dx
    b[1:, :] |= dy
    b[:-1, :] |= dy
    return GridResult(xs, ys, labels, b)


def clip_segment_2d(piece: BoundaryPiece, bbox):
    """Endpoints of the piece's line inside ``bbox`` and its region, or None."""
    n, c = piece.plane.normal, piece.plane.offset
    if n.size != 2:
        raise ContractError("segment clipping is 2-D only")
    p0 = -c * n
    u = np.array([-n[1], n[0]])
    x0, y0, x1, y1 = map(float, bbox)
    A = np.vstack([piece.region.A, [[1, 0], [-1, 0], [0, 1], [0, -1]]])
    d = np.concatenate([piece.region.d, [x1, -x0, y1, -y0]])
    au = A @ u
    room = d - A @ p0
    lo, hi = -np.inf, np.inf
    for a, r in zip(au, room):
        if abs(a) < 1e-15:
            if r < 0:
                return None
            continue
        t = r / a
        if a > 0:
            hi = min(hi, t)
        else:
            lo = max(lo, t)
    if not lo < hi:
        return None
    return p0 + lo * u, p0 + hi * u


def segments_2d(pieces, bbox):
    out = []
    for k, p in enumerate(pieces):
        seg = clip_segment_2d(p, bbox)
        if seg is not None:
            out.append((k, seg[0], seg[1], p.plane.class_pair))
    return out


def trace_points(segments, spacing):
    pts = []
    for _, a, b, _ in segments:
        m = max(2, int(np.ceil(np.linalg.norm(b - a) / spacing)) + 1)
        t = np.linspace(0.0, 1.0, m)[:, None]
        pts.append(a + t * (b - a))
    return np.vstack(pts) if pts else np.zeros((0, 2))


def hausdorff_cells(pieces, grid: GridResult, bbox) -> float:
    """Symmetric Hausdorff distance, in grid cells, between traces and boundary cells."""
    cell = grid.cell
    trace = trace_points(segments_2d(pieces, bbox), cell / 4)
    cells = grid.boundary_points()
    if len(trace) == 0 and len(cells) == 0:
        return 0.0
    if len(trace) == 0 or len(cells) == 0:
        return np.inf
    d1 = cKDTree(cells).query(trace)[0].max()
    d2 = cKDTree(trace).query(cells)[0].max()
    return float(max(d1, d2) / cell)


def write_segments_csv(path, pieces, bbox):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["piece_id", "x1", "y1", "x2", "y2", "class_i", "class_j"])
        for k, a, b, (i, j) in segments_2d(pieces, bbox):
            w.writerow([k, repr(a[0]), repr(a[1]), repr(b[0]), repr(b[1]), i, j])


def write_grid_csv(path, grid: GridResult):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "label"])
        for iy, y in enumerate(grid.ys):
            for ix, x in enumerate(grid.xs):
                w.writerow([repr(x), repr(y), int(grid.labels[iy, ix])])
