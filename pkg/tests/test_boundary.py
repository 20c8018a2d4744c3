import numpy as np
import pytest

from clime.activations import RELU, Activation
from clime.boundary import (BoundaryPiece, Hyperplane, clip_segment_2d, enumerate_boundaries, feasible,
                            grid_boundary_2d, hausdorff_cells, pairwise_plane, write_grid_csv,
                            write_segments_csv)
from clime.errors import ContractError, DegeneratePlaneError
from clime.linearize import linearize_network
from clime.nn import DenseLayer, Network
from clime.regions import AffineMap, Polytope
from conftest import random_net


def test_pairwise_plane_simple():
    p = pairwise_plane(AffineMap(np.eye(2), np.zeros(2)), 0, 1)
    np.testing.assert_allclose(p.normal, np.array([1, -1]) / np.sqrt(2))
    assert p.offset == 0 and p.class_pair == (0, 1)


def test_pairwise_plane_degenerate():
    with pytest.raises(DegeneratePlaneError):
        pairwise_plane(AffineMap(np.ones((2, 2)), np.array([0.0, 1.0])), 0, 1)
    with pytest.raises(ContractError):
        pairwise_plane(AffineMap(np.eye(2), np.zeros(2)), 1, 1)


def test_feasible_trivial_cases():
    plane = Hyperplane(np.array([1.0, 0.0]), 0.0, (0, 1))
    w = feasible(Polytope.whole_space(2), plane)
    assert w is not None and abs(w[0]) <= 1e-9
    assert feasible(Polytope(np.array([[-1.0, 0.0]]), np.array([-1.0])), plane) is None


def _interval_on_line(A, d, p0, u):
    """Exact feasible parameter interval of the line p0 + t u inside {A x <= d}."""
    au, room = A @ u, d - A @ p0
    lo, hi = -np.inf, np.inf
    for a, r in zip(au, room):
        if abs(a) < 1e-15:
            if r < 0:
                return 0.0
        elif a > 0:
            hi = min(hi, r / a)
        else:
            lo = max(lo, r / a)
    return max(0.0, hi - lo)


def test_feasible_agrees_with_sampling_oracle():
    rng = np.random.default_rng(5)
    agree = checked = 0
    for _ in range(200):
        m = rng.integers(1, 7)
        A = rng.normal(size=(m, 2))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        d = rng.normal(size=m) * 0.5 + 0.3
        # box the region so the sampled stretch of the line covers all of it
        A = np.vstack([A, np.eye(2), -np.eye(2)])
        d = np.concatenate([d, np.full(4, 10.0)])
        n = rng.normal(size=2)
        n /= np.linalg.norm(n)
        plane = Hyperplane(n, float(rng.normal() * 0.5), (0, 1))
        p0, u = -plane.offset * n, np.array([-n[1], n[0]])
        length = _interval_on_line(A, d, p0, u)
        if 0 < length < 1e-3:
            continue  # borderline
        ts = rng.uniform(-20, 20, size=100_000)
        pts = p0 + ts[:, None] * u
        sampled = bool(np.any(np.all(pts @ A.T <= d, axis=1)))
        got = feasible(Polytope(A, d), plane) is not None
        checked += 1
        agree += sampled == got
    assert checked > 150 and agree == checked


def test_witness_satisfies_constraints(rng):
    for _ in range(50):
        A = rng.normal(size=(5, 3))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        d = np.abs(rng.normal(size=5)) + 0.1
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        plane = Hyperplane(n, float(rng.normal() * 0.1), (0, 1))
        w = feasible(Polytope(A, d), plane)
        if w is not None:
            assert np.all(d - A @ w >= -1e-9) and abs(plane.value(w)) <= 1e-7


def test_affine_model_has_one_piece(rng):
    net = Network([DenseLayer(np.array([[1.0, 2.0], [-1.0, 0.5]]), [0.1, -0.3])])
    X = rng.normal(size=(100, 2))
    pieces = enumerate_boundaries(net, X)
    assert len(pieces) == 1


def trained_relu_toy():
    from clime.data import make_moons
    from clime.nn import TrainConfig, train

    ds = make_moons(2000, 0.05, seed=0)
    net, _ = train(Network.mlp([2, 10, 10, 10, 2], RELU, seed=0), ds.features, ds.labels,
                   TrainConfig(learning_rate=3e-3, batch_size=64, epochs=30, seed=0))
    return net, ds


def test_relu_toy_witnesses_are_ambiguous():
    net, ds = trained_relu_toy()
    pieces = enumerate_boundaries(net, ds.features)
    assert len(pieces) >= 1
    for p in pieces:
        logits = net.forward(p.witness)[0]
        assert abs(logits[0] - logits[1]) < 1e-6
        assert np.all(p.region.slack(p.witness) >= -1e-7)
    again = enumerate_boundaries(net, ds.features)
    assert [p.pattern_digest for p in again] == [p.pattern_digest for p in pieces]
    assert all(np.array_equal(a.witness, b.witness) for a, b in zip(again, pieces))


def test_all_pairs_flag(rng):
    plnn = linearize_network(random_net(rng, [2, 6, 3], Activation("tanh")), 3)
    X = rng.normal(size=(200, 2))
    top2 = enumerate_boundaries(plnn, X)
    every = enumerate_boundaries(plnn, X, "all")
    assert len(every) >= len(top2)
    assert {p.plane.class_pair for p in every} <= {(0, 1), (0, 2), (1, 2)}


def test_grid_constant_classifier():
    net = Network([DenseLayer(np.zeros((2, 2)), [1.0, 0.0])])
    g = grid_boundary_2d(net, (-1, -1, 1, 1), 64)
    assert not g.boundary.any()


def test_grid_half_plane_classifier():
    net = Network([DenseLayer(np.array([[1.0, 0.0], [0.0, 0.0]]), [0.0, 0.0])])
    g = grid_boundary_2d(net, (-1, -1, 1, 1), 64)
    pts = g.boundary_points()
    assert len(pts) and np.all(np.abs(pts[:, 0]) <= g.cell)
    pieces = enumerate_boundaries(net, np.random.default_rng(0).normal(size=(50, 2)))
    assert hausdorff_cells(pieces, g, (-1, -1, 1, 1)) < 1.0


def test_grid_contract():
    net = Network([DenseLayer(np.zeros((2, 3)), [1.0, 0.0])])
    with pytest.raises(ContractError):
        grid_boundary_2d(net, (-1, -1, 1, 1), 64)
    with pytest.raises(ContractError):
        grid_boundary_2d(Network([DenseLayer(np.zeros((2, 2)), [1.0, 0.0])]), (-1, -1, 1, 1), 32)


def test_clip_segment():
    plane = Hyperplane(np.array([1.0, 0.0]), -0.5, (0, 1))
    region = Polytope(np.array([[0.0, 1.0]]), np.array([0.25]))
    a, b = clip_segment_2d(BoundaryPiece(plane, region, np.array([0.5, 0.0])), (-1, -1, 1, 1))
    ys = sorted([a[1], b[1]])
    assert a[0] == pytest.approx(0.5) and ys == pytest.approx([-1.0, 0.25])


def test_csv_exports(tmp_path):
    net = Network([DenseLayer(np.array([[1.0, 0.0], [0.0, 0.0]]), [0.0, 0.0])])
    pieces = enumerate_boundaries(net, np.random.default_rng(0).normal(size=(20, 2)))
    write_segments_csv(tmp_path / "p.csv", pieces, (-1, -1, 1, 1))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "piece_id,x1,y1,x2,y2,class_i,class_j" and len(lines) == 2
    g = grid_boundary_2d(net, (-1, -1, 1, 1), 64)
    write_grid_csv(tmp_path / "g.csv", g)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "x,y,label" and len(lines) == 64 * 64 + 1


def boundary_cell_mismatch(a, b):
    """Share of boundary cells (both grids pooled) with no boundary cell of the other grid among their 8 neighbours."""
    from scipy.ndimage import binary_dilation

    A, B = a.boundary, b.boundary
    st = np.ones((3, 3), bool)
    miss = (A & ~binary_dilation(B, st)).sum() + (B & ~binary_dilation(A, st)).sum()
    return miss / max(1, A.sum() + B.sum())


def toy_sigmoid_net():
    from clime.data import bbox_of, make_circles
    from clime.nn import TrainConfig, train

    ds = make_circles(2000, 0.05, seed=0)
    net, _ = train(Network.mlp([2, 8, 5, 2], Activation("sigmoid"), seed=0), ds.features, ds.labels,
                   TrainConfig(learning_rate=1e-2, batch_size=64, epochs=100, seed=0))
    return net, ds, bbox_of(ds.features)


def test_p3_boundary_cells_match_smooth_net():
    net, _, bbox = toy_sigmoid_net()
    a = grid_boundary_2d(net, bbox, 512)
    b = grid_boundary_2d(linearize_network(net, 3), bbox, 512)
    miss = float(boundary_cell_mismatch(a, b))
    assert miss < 0.05, f"{100 * miss:.1f}% of boundary cells unmatched within one cell"


def test_boundary_cells_converge_with_more_segments():
    net, _, bbox = toy_sigmoid_net()
    a = grid_boundary_2d(net, bbox, 512)
    b = grid_boundary_2d(linearize_network(net, 9), bbox, 512)
    miss = float(boundary_cell_mismatch(a, b))
    assert miss < 0.05, f"{100 * miss:.1f}% of boundary cells unmatched within one cell"


def test_region_plane_near_origin_overlays_grid():
    from scipy.spatial import cKDTree

    from clime.boundary import segments_2d, trace_points

    net, ds, bbox = toy_sigmoid_net()
    plnn = linearize_network(net, 3)
    g = grid_boundary_2d(plnn, bbox, 512)
    # the circles boundary rings the origin; take the piece whose witness lies closest to it
    pieces = enumerate_boundaries(plnn, ds.features)
    mine = [min(pieces, key=lambda p: np.linalg.norm(p.witness))]
    pts = trace_points(segments_2d(mine, bbox), g.cell / 4)
    d, _ = cKDTree(g.boundary_points()).query(pts)
    assert d.max() / g.cell < 2.0
