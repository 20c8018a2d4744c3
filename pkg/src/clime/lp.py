"""Dense two-phase simplex (Bland's rule) and the Chebyshev-center LPs built on it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError
from .regions import Polytope

MAX_ITER = 10_000
TOL = 1e-9


@dataclass
class LPResult:
    status: str  # "optimal", "infeasible" or "unbounded"
    x: np.ndarray | None
    value: float
    iterations: int


class _Tableau:
    def __init__(self, T, basis, max_iter):
        self.T = T  # (m + 1, ncols + 1), last row is the objective, last column the rhs
        self.basis = basis
        self.iterations = 0
        self.max_iter = max_iter

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        others = np.abs(T[:, col]) > 0
        others[row] = False
        T[others] -= np.outer(T[others, col], T[row])
        self.basis[row] = col

    def run(self, allowed):
        """Maximize the objective row; returns False if unbounded."""
        T = self.T
        m = T.shape[0] - 1
        while True:
            # objective row holds -reduced costs; entering = lowest index with a negative entry
            cand = np.flatnonzero((T[m, :-1] < -TOL) & allowed)
            if cand.size == 0:
                return True
            col = cand[0]
            colv = T[:m, col]
            pos = colv > TOL
            if not pos.any():
                return False
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / colv[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + TOL * max(1.0, abs(best)))
            row = ties[np.argmin(self.basis[ties])]
            self.pivot(row, col)
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise SolverError(f"simplex exceeded {self.max_iter} iterations")


def simplex_max(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_iter=MAX_ITER) -> LPResult:
    """Maximize ``c.z`` subject to ``A_ub z <= b_ub``, ``A_eq z = b_eq``, ``z >= 0``."""
    c = np.asarray(c, dtype=np.float64)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=np.float64).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=np.float64).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=np.float64).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64).reshape(-1)
    mu, me = A_ub.shape[0], A_eq.shape[0]
    m = mu + me

    # columns: originals | slacks (one per <= row) | artificials
    sign_ub = np.where(b_ub < 0, -1.0, 1.0)
    sign_eq = np.where(b_eq < 0, -1.0, 1.0)
    need_art = np.concatenate([b_ub < 0, np.ones(me, dtype=bool)])
    n_art = int(need_art.sum())
    ncols = n + mu + n_art
    T = np.zeros((m + 1, ncols + 1))
    T[:mu, :n] = A_ub * sign_ub[:, None]
    T[:mu, n:n + mu] = np.diag(sign_ub)
    T[:mu, -1] = b_ub * sign_ub
    T[mu:m, :n] = A_eq * sign_eq[:, None]
    T[mu:m, -1] = b_eq * sign_eq
    basis = np.empty(m, dtype=np.int64)
    art_cols = np.arange(n + mu, ncols)
    k = 0
    for i in range(m):
        if need_art[i]:
            T[i, art_cols[k]] = 1.0
            basis[i] = art_cols[k]
            k += 1
        else:
            basis[i] = n + i
    tab = _Tableau(T, basis, max_iter)

    if n_art:
        # phase 1: maximize -sum(artificials)
        T[m, :] = 0.0
        T[m, art_cols] = 1.0
        for i in np.flatnonzero(np.isin(basis, art_cols)):
            T[m] -= T[i]
        tab.run(np.ones(ncols, dtype=bool))
        if T[m, -1] < -1e-7 * max(1.0, np.abs(T[:m, -1]).max(initial=0.0)):
            return LPResult("infeasible", None, np.nan, tab.iterations)
        # drive zero-level artificials out of the basis; drop rows that are redundant
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] in art_cols:
                cand = np.flatnonzero(np.abs(T[i, :n + mu]) > TOL)
                if cand.size:
                    tab.pivot(i, cand[0])
                else:
                    keep[i] = False
        T = np.vstack([T[:m][keep], T[m:]])
        tab.T = T
        tab.basis = basis = basis[keep]
        m = T.shape[0] - 1

    allowed = np.zeros(ncols, dtype=bool)
    allowed[:n + mu] = True
    cost = np.zeros(ncols)
    cost[:n] = c
    T[m, :] = 0.0
    T[m, :ncols] = -cost
    for i in range(m):
        cb = cost[basis[i]]
        if cb:
            T[m] += cb * T[i]
    if not tab.run(allowed):
        return LPResult("unbounded", None, np.inf, tab.iterations)
    z = np.zeros(ncols)
    z[basis] = T[:m, -1]
    return LPResult("optimal", z[:n], float(c @ z[:n]), tab.iterations)


def chebyshev_center(A, d, A_eq=None, b_eq=None, radius_cap=1.0, ball_normals=None):
    """Center and radius of the largest ball inside ``{A x <= d}`` (radius capped).

    ``ball_normals`` optionally replaces the row norms used for the ball term,
    which lets the ball live inside a subspace (see :func:`feasible`).
    Returns ``(None, -inf)`` if the set is empty.
    """
    A = np.asarray(A, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    dim = A.shape[1]
    norms = np.linalg.norm(A, axis=1) if ball_normals is None else np.asarray(ball_normals)
    # x = xp - xm, variables [xp, xm, r]
    rows = np.hstack([A, -A, norms[:, None]])
    cap = np.zeros((1, 2 * dim + 1))
    cap[0, -1] = 1.0
    A_ub = np.vstack([rows, cap])
    b_ub = np.concatenate([d, [radius_cap]])
    eq = None
    if A_eq is not None:
        A_eq = np.asarray(A_eq, dtype=np.float64)
        eq = np.hstack([A_eq, -A_eq, np.zeros((A_eq.shape[0], 1))])
    c = np.zeros(2 * dim + 1)
    c[-1] = 1.0
    res = simplex_max(c, A_ub, b_ub, eq, b_eq)
    if res.status != "optimal" or res.value < 0:
        return None, -np.inf
    z = res.x
    return z[:dim] - z[dim:2 * dim], float(z[-1])


def prune_redundant(region: Polytope, tol=1e-9) -> Polytope:
    """Drop halfspaces implied by the others."""
    A, d = region.A, region.d
    keep = np.ones(len(d), dtype=bool)
    dim = region.dim
    for i in range(len(d)):
        others = keep.copy()
        others[i] = False
        # maximize a_i.x over the other rows plus a relaxed copy of row i
        Ai = np.vstack([A[others], A[i:i + 1]])
        di = np.concatenate([d[others], [d[i] + 1.0]])
        res = simplex_max(np.concatenate([A[i], -A[i]]), np.hstack([Ai, -Ai]), di)
        if res.status == "optimal" and res.value <= d[i] + tol:
            keep[i] = False
    return Polytope(A[keep], d[keep])
