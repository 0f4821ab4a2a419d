"""Dynamic time warping between two 3D position sequences.

Used to score an estimated trajectory against a reference one when the
two are sampled differently, e.g. a track that was lost for a while.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentResult:
    cost: float
    path: tuple[tuple[int, int], ...]

    @property
    def normalized_cost(self) -> float:
        return self.cost / len(self.path)


def _as_points(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.size == 0:
        raise EmptyInputError("dtw needs two nonempty sequences")
    return arr.reshape(-1, 3)


def dtw(a: Sequence, b: Sequence, band: Optional[int] = None) -> AlignmentResult:
    """Minimum-cost monotone alignment of ``a`` onto ``b``.

    Steps are (1, 1), (1, 0) and (0, 1); the pointwise cost is Euclidean
    distance.  With ``band`` only cells with ``|i - j| <= band`` are used
    (Sakoe-Chiba), which must at least cover the length difference.
    Backtracking prefers the diagonal, then (1, 0), then (0, 1) on ties.
    """
    A, B = _as_points(a), _as_points(b)
    n, m = len(A), len(B)
    if band is not None and band < abs(n - m):
        raise ValueError(f"band {band} cannot reach the end cell of a {n}x{m} alignment")
    d = cdist(A, B).tolist()

    inf = math.inf
    D = [[inf] * m for _ in range(n)]
    for i in range(n):
        lo, hi = (0, m) if band is None else (max(0, i - band), min(m, i + band + 1))
        row, prev, di = D[i], D[i - 1] if i else None, d[i]
        for j in range(lo, hi):
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if i and j:
                    best = prev[j - 1]
                if i and prev[j] < best:
                    best = prev[j]
                if j and row[j - 1] < best:
                    best = row[j - 1]
            row[j] = best + di[j]

    i, j = n - 1, m - 1
    path = [(i, j)]
    while i or j:
        # candidates in tie-break order; min() keeps the first minimum
        cands = []
        if i and j:
            cands.append((D[i - 1][j - 1], i - 1, j - 1))
        if i:
            cands.append((D[i - 1][j], i - 1, j))
        if j:
            cands.append((D[i][j - 1], i, j - 1))
        _, i, j = min(cands, key=lambda c: c[0])
        path.append((i, j))
    path.reverse()
    return AlignmentResult(D[n - 1][m - 1], tuple(path))


def path_cost(a, b, path) -> float:
    """Summed distances along ``path``, accumulated from the start."""
    d = cdist(_as_points(a), _as_points(b))
    total = 0.0
    for i, j in path:
        total += float(d[i, j])
    return total
