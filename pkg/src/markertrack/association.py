"""Track-to-point data association.

Costs are squared Mahalanobis distances of points from each track's
predicted measurement.  Pairs above the chi-square gate are infeasible.
The optimal solver first maximizes the number of matches and then
minimizes the summed cost; the greedy one repeatedly takes the cheapest
pair whose track and point are both still free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, PositiveFloat
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import kalman
from ._schema import STRICT
from .kalman import KalmanConfig, KalmanState

# chi-square 95% quantile, 3 degrees of freedom
CHI2_3DOF_95 = 7.815

# below this many points a dense cost matrix beats building a tree
INDEX_MIN_POINTS = 64

BRUTE_FORCE_MAX = 8


class AssociationError(ValueError):
    pass


class OracleSizeError(ValueError):
    pass


class AssociationConfig(BaseModel):
    model_config = STRICT

    gate: PositiveFloat = CHI2_3DOF_95
    strategy: Literal["greedy", "optimal"] = "optimal"


@dataclass(frozen=True)
class Assignment:
    matches: tuple[tuple[int, int, float], ...] = ()
    unmatched_tracks: tuple[int, ...] = ()
    unmatched_points: tuple[int, ...] = ()

    @property
    def total_cost(self) -> float:
        return math.fsum(c for _, _, c in self.matches)

    def as_dict(self) -> dict[int, int]:
        """track_id -> point_index"""
        return {t: p for t, p, _ in self.matches}


class SpatialIndex:
    """k-d tree over 3D points with exhaustive-search semantics."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        self.points = pts
        self._tree = cKDTree(pts) if len(pts) else None

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, q, k: int = 1) -> list[tuple[int, float]]:
        """Up to ``k`` nearest points as ``(index, distance)``, closest first."""
        if self._tree is None:
            return []
        k = min(k, len(self.points))
        d, i = self._tree.query(np.asarray(q, dtype=float), k=k)
        d, i = np.atleast_1d(d), np.atleast_1d(i)
        return [(int(a), float(b)) for a, b in zip(i, d)]

    def radius(self, q, r: float) -> list[int]:
        """Sorted indices of points within distance ``r`` of ``q`` (inclusive)."""
        if self._tree is None:
            return []
        return sorted(self._tree.query_ball_point(np.asarray(q, dtype=float), r))

    def pairs_within(self, r: float) -> set[tuple[int, int]]:
        """All index pairs ``(i, j)``, ``i < j``, closer than ``r``."""
        if self._tree is None:
            return set()
        return self._tree.query_pairs(r)


def build_index(points) -> SpatialIndex:
    return SpatialIndex(points)


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Permutation sorting points lexicographically by (x, y, z)."""
    p = np.asarray(points).reshape(-1, 3)
    return np.lexsort((p[:, 2], p[:, 1], p[:, 0]))


def cost_matrix(X, P, Z, R, gate: float) -> np.ndarray:
    """Gated squared Mahalanobis costs, ``inf`` where infeasible.

    ``X`` (n, 6) and ``P`` (n, 6, 6) are stacked predictions, ``Z`` (m, 3)
    the points.
    """
    n, m = len(X), len(Z)
    if n == 0 or m == 0:
        return np.full((n, m), np.inf)
    if m < INDEX_MIN_POINTS:
        C = kalman.mahalanobis(X, P, Z, kalman.H, R)
    else:
        C = _indexed_costs(X, P, Z, R, gate)
    C[C > gate] = np.inf
    return C


def _indexed_costs(X, P, Z, R, gate):
    # d' S^-1 d <= gate implies |d|^2 <= gate * lambda_max(S)
    S = P[:, :3, :3] + R
    Sinv = np.linalg.inv(S)
    radii = np.sqrt(gate * np.linalg.eigvalsh(S)[:, -1])
    tree = cKDTree(Z)
    C = np.full((len(X), len(Z)), np.inf)
    for i, cand in enumerate(tree.query_ball_point(X[:, :3], radii)):
        if cand:
            d = Z[cand] - X[i, :3]
            C[i, cand] = np.einsum("mi,ij,mj->m", d, Sinv[i], d)
    return C


def solve(C: np.ndarray, strategy: str = "optimal") -> list[tuple[int, int]]:
    """Match rows to columns of a cost matrix with ``inf`` for infeasible.

    Rows and columns are assumed to be in canonical order already; ties are
    broken by lower row, then lower column.
    """
    return _solve(C, np.isfinite(C), strategy)


def solve_gated(cost: np.ndarray, gate: float, strategy: str = "optimal") -> list[tuple[int, int]]:
    """:func:`solve` on raw costs, treating entries above ``gate`` as infeasible."""
    return _solve(cost, cost <= gate, strategy)


def _solve(C, feasible, strategy):
    if strategy not in ("greedy", "optimal"):
        raise AssociationError(f"unknown strategy {strategy!r}")
    if C.size == 0:
        return []
    r, c = np.nonzero(feasible)
    r, c = r.tolist(), c.tolist()
    if len(set(r)) == len(r) and len(set(c)) == len(c):
        # no contention: every feasible pair is in the optimum
        return list(zip(r, c))
    if strategy == "greedy":
        return _greedy(C, feasible)
    # Any infeasible pair costs more than every feasible matching, so the
    # minimum-cost full assignment has the most feasible pairs possible.
    big = min(C.shape) * float(C[feasible].max()) + 1.0
    rows, cols = linear_sum_assignment(np.where(feasible, C, big))
    keep = feasible[rows, cols]
    return list(zip(rows[keep].tolist(), cols[keep].tolist()))


def _greedy(C, feasible):
    r, c = np.nonzero(feasible)
    order = np.lexsort((c, r, C[r, c]))
    used_r, used_c, out = set(), set(), []
    for k in order:
        i, j = int(r[k]), int(c[k])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        out.append((i, j))
    return sorted(out)


def _assignment(pairs, C, track_ids, n_points, col_to_point=None) -> Assignment:
    col_to_point = col_to_point if col_to_point is not None else range(n_points)
    matches = sorted((track_ids[i], int(col_to_point[j]), float(C[i, j])) for i, j in pairs)
    mt = {t for t, _, _ in matches}
    mp = {p for _, p, _ in matches}
    return Assignment(
        matches=tuple(matches),
        unmatched_tracks=tuple(sorted(t for t in track_ids if t not in mt)),
        unmatched_points=tuple(p for p in range(n_points) if p not in mp),
    )


def associate(
    predictions: Sequence[tuple[int, KalmanState]],
    points,
    cfg: AssociationConfig = AssociationConfig(),
    kcfg: KalmanConfig = KalmanConfig(),
) -> Assignment:
    """Match predicted tracks to the points of one frame.

    The result does not depend on the order of ``points`` beyond the
    labels of ``point_index``.
    """
    ids = [tid for tid, _ in predictions]
    if len(set(ids)) != len(ids):
        raise AssociationError("duplicate track_id in predictions")
    Z = np.asarray(points, dtype=float).reshape(-1, 3)
    preds = sorted(predictions, key=lambda p: p[0])
    ids = [tid for tid, _ in preds]
    perm = canonical_order(Z)
    if preds:
        X = np.stack([s.x for _, s in preds])
        P = np.stack([s.P for _, s in preds])
    else:
        X, P = np.empty((0, 6)), np.empty((0, 6, 6))
    C = cost_matrix(X, P, Z[perm], kcfg.R, cfg.gate)
    pairs = solve(C, cfg.strategy)
    return _assignment(pairs, C, ids, len(Z), perm)


def brute_force_assign(costs, n_tracks: int | None = None, n_points: int | None = None) -> Assignment:
    """Exhaustive reference solver.

    ``costs[i][j]`` is the cost of track ``i`` taking point ``j``; ``inf``
    or ``None`` marks an infeasible pair.  Returns the matching with the
    most pairs, then the lowest cost, then the lexicographically smallest
    match list.
    """
    rows = [[math.inf if v is None else float(v) for v in row] for row in costs]
    n = n_tracks if n_tracks is not None else len(rows)
    m = n_points if n_points is not None else (len(rows[0]) if rows else 0)
    if n > BRUTE_FORCE_MAX or m > BRUTE_FORCE_MAX:
        raise OracleSizeError(f"brute force limited to {BRUTE_FORCE_MAX}x{BRUTE_FORCE_MAX}, got {n}x{m}")

    best_key, best = None, []
    used = [False] * m
    pairs: list[tuple[int, int]] = []

    # each track takes a distinct feasible point or nothing
    def visit(i):
        nonlocal best_key, best
        if i == n:
            cost = math.fsum(rows[a][b] for a, b in pairs)
            key = (-len(pairs), cost, pairs)
            if best_key is None or key < best_key:
                best_key, best = (key[0], cost, list(pairs)), list(pairs)
            return
        for j in range(m):
            if not used[j] and not math.isinf(rows[i][j]):
                used[j] = True
                pairs.append((i, j))
                visit(i + 1)
                pairs.pop()
                used[j] = False
        visit(i + 1)

    visit(0)
    matched_t = {i for i, _ in best}
    matched_p = {j for _, j in best}
    return Assignment(
        matches=tuple((i, j, rows[i][j]) for i, j in best),
        unmatched_tracks=tuple(i for i in range(n) if i not in matched_t),
        unmatched_points=tuple(j for j in range(m) if j not in matched_p),
    )
