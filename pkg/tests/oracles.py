"""Independent reference computations shared by the tests."""
import math

from markertrack.alignment import path_cost
from markertrack.simulator import Motion, motion_at, time_since_turn


def monotone_paths(n, m):
    """Every path from (0, 0) to (n-1, m-1) with steps (1,1), (1,0), (0,1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield ((i, j),)
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield ((i, j),) + rest
    return list(walk(0, 0))


def exhaustive_dtw(a, b, band=None):
    paths = monotone_paths(len(a), len(b))
    if band is not None:
        paths = [p for p in paths if all(abs(i - j) <= band for i, j in p)]
    return min(path_cost(a, b, p) for p in paths)


def riccati_posterior(p0, a=1.0, q=1.0, h=1.0, r=1.0, n=200):
    """Scalar posterior variance after ``n`` predict/update cycles."""
    p = p0
    for _ in range(n):
        prior = a * p * a + q
        p = prior - prior * h * h * prior / (h * prior * h + r)
    return p


def constant_velocity(user, sc, t, margin_ms=500.0):
    """True when ``user`` walks a straight leg for ``margin_ms`` either side of ``t``."""
    if motion_at(user, sc, t) is not Motion.WALKING or motion_at(user, sc, t + margin_ms) is not Motion.WALKING:
        return False
    return time_since_turn(user, sc, t) >= margin_ms and time_since_turn(user, sc, t + margin_ms) >= 2 * margin_ms


def rmse(errors):
    """Per-axis rmse of a list of 3-vectors."""
    return math.sqrt(sum(e[0] ** 2 + e[1] ** 2 + e[2] ** 2 for e in errors) / (3 * len(errors)))
