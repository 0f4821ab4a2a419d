"""Per-frame multi-user tracking pipeline.

Each call to :meth:`Tracker.step` predicts every live track to the frame
time, associates the frame's points, corrects matched tracks, coasts or
retires unmatched ones, spawns tentative tracks from leftover points and
runs duck calibration on confirmed tracks.  Identified tracks feed a
bounded per-user position history.

Filter state for all tracks lives in one stacked array of isotropic
rows (see :func:`markertrack.kalman.iso_update`) so prediction, gating
and correction run as single vectorized calls.
"""
from __future__ import annotations

import bisect
import copy
import json
import operator
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, NonNegativeFloat, NonNegativeInt, PositiveInt

from . import kalman
from ._schema import STRICT
from .association import AssociationConfig, canonical_order, solve_gated
from .calibration import DuckDetector, DuckParams, IdentityRegistry, bind_on_complete, duck_step
from .frames import FrameParseError, MarkerFrame, Point3, RoomBounds
from .kalman import KalmanConfig, KalmanState


class OrderingError(ValueError):
    """Frame time did not advance."""


class Lifecycle(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    IDENTIFIED = "identified"
    COASTING = "coasting"
    DEAD = "dead"


TENTATIVE, CONFIRMED, IDENTIFIED, COASTING, DEAD = Lifecycle


class TrackerParams(BaseModel):
    model_config = STRICT

    confirm_hits: PositiveInt = 3
    max_coast: NonNegativeInt = 50
    # None: tentative tracks coast as long as confirmed ones
    tentative_max_coast: Optional[NonNegativeInt] = 0
    # no births within this distance of a confirmed track's prediction
    spawn_exclusion: NonNegativeFloat = 0.5
    # two confirmed tracks closer than this are one target; 0 disables
    merge_distance: NonNegativeFloat = 0.25
    history_len: PositiveInt = 6000
    max_users: PositiveInt = 10


@dataclass(slots=True)
class _Track:
    track_id: int
    lifecycle: Lifecycle = Lifecycle.TENTATIVE
    hits: int = 1
    misses: int = 0
    confirmed: bool = False
    user_id: Optional[int] = None
    # first measurement and its time while velocity is still unknown
    seed: Optional[tuple[np.ndarray, float]] = None
    # created on the first height sample fed to calibration
    detector: Optional[DuckDetector] = None


@dataclass(frozen=True)
class Track:
    track_id: int
    state: KalmanState
    lifecycle: Lifecycle
    hits: int
    misses: int
    detector: DuckDetector
    user_id: Optional[int]


class TrackOutput(NamedTuple):
    track_id: int
    user_id: Optional[int]
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    lifecycle: Lifecycle


@dataclass(frozen=True)
class FrameOutput:
    seq: int
    t: int
    tracks: tuple[TrackOutput, ...] = ()

    def identified(self) -> list[TrackOutput]:
        return [tr for tr in self.tracks if tr.user_id is not None]


class Tracker:
    """Mutable world state owned by a single stepping context.

    Use :meth:`copy` for value semantics; stepping a copy leaves the
    original untouched.
    """

    def __init__(
        self,
        params: TrackerParams = TrackerParams(),
        kalman_cfg: KalmanConfig = KalmanConfig(),
        association: AssociationConfig = AssociationConfig(),
        duck: DuckParams = DuckParams(),
        room: RoomBounds = RoomBounds(),
    ):
        self.params = params
        self.kalman_cfg = kalman_cfg
        self.association = association
        self.duck = duck
        self.room = room
        self.registry = IdentityRegistry()
        self.history: dict[int, deque] = {}
        self.next_track_id = 0
        self.last_t: Optional[int] = None
        self._tracks: list[_Track] = []
        self._S = np.empty((0, kalman.ISO_DIM))
        self._r = kalman_cfg.sigma_m**2
        self._C0 = kalman.iso_initial(kalman_cfg)
        self._transitions: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        # tracks still waiting for their second point
        self._n_seeded = 0
        self._tentative_max_coast = (
            params.max_coast if params.tentative_max_coast is None else params.tentative_max_coast
        )

    @classmethod
    def from_config(cls, cfg) -> "Tracker":
        """Build from an :class:`~markertrack.config.EngineConfig`."""
        tr = cls(cfg.tracker, cfg.kalman, cfg.association, cfg.calibration, cfg.room)
        for uid in cfg.users:
            tr.register_user(uid)
        return tr

    def register_user(self, user_id: int) -> None:
        """Queue a user; they are bound to the next track that calibrates."""
        self.registry.register(user_id)

    def copy(self) -> "Tracker":
        return copy.deepcopy(self)

    @property
    def tracks(self) -> list[Track]:
        P = kalman.iso_covariance(self._S)
        return [
            Track(tr.track_id, KalmanState(self._S[i, :6], P[i], self.last_t or 0), tr.lifecycle,
                  tr.hits, tr.misses, tr.detector or DuckDetector(self.duck), tr.user_id)
            for i, tr in enumerate(self._tracks)
        ]

    def n_identified(self) -> int:
        return len(self.registry.bound)

    def get_history(self, user_id: int, t0: float = float("-inf"), t1: float = float("inf")) -> list[tuple[int, Point3]]:
        """Time-ordered ``(t, position)`` samples of a user within ``[t0, t1]``."""
        hist = self.history.get(user_id)
        if not hist:
            return []
        times = [t for t, _ in hist]
        lo = bisect.bisect_left(times, t0)
        hi = bisect.bisect_right(times, t1)
        return [hist[i] for i in range(lo, hi)]

    # ------------------------------------------------------------------

    def _predict(self, S: np.ndarray, dt_ms: int) -> np.ndarray:
        cached = self._transitions.get(dt_ms)
        if cached is None:
            F, g = kalman.iso_transition(dt_ms / 1000.0, self.kalman_cfg.sigma_a)
            cached = self._transitions[dt_ms] = (F.T.copy(), g)
        Ft, g = cached
        return S @ Ft + g

    def step(self, frame: MarkerFrame) -> FrameOutput:
        if self.last_t is not None and frame.t <= self.last_t:
            raise OrderingError(f"frame t={frame.t} does not advance past t={self.last_t}")
        t = frame.t
        S = self._S
        tracks = self._tracks
        r = self._r

        if tracks:
            S = self._predict(S, t - self.last_t)

        Z = frame.points
        if len(Z) > 1:
            Z = Z[canonical_order(Z)]
        pairs = []
        if tracks and len(Z):
            cost = kalman.iso_mahalanobis(S, Z, r)
            pairs = solve_gated(cost, self.association.gate, self.association.strategy)
        track_to_point = dict(pairs)

        # correct matched tracks in one batch; seeded tracks get bootstrapped
        if self._n_seeded:
            upd, cols = [], []
            for i, j in pairs:
                seed = tracks[i].seed
                if seed is None:
                    upd.append(i)
                    cols.append(j)
                    continue
                z0, t0 = seed
                S[i, :3] = Z[j]
                S[i, 3:6] = (Z[j] - z0) / ((t - t0) / 1000.0)
                S[i, 6:] = self._C0
                tracks[i].seed = None
                self._n_seeded -= 1
        else:
            upd = [i for i, _ in pairs]
            cols = [j for _, j in pairs]
        if len(upd) == len(S):
            # rows come out of the solver in order
            S = kalman.iso_update(S, Z[cols], r)
        elif upd:
            S[upd] = kalman.iso_update(S[upd], Z[cols], r)

        p = self.params
        rows = S[:, :6].tolist()
        merged = self._duplicates(rows, track_to_point)
        dead = []
        out = []
        for i, tr in enumerate(tracks):
            row = rows[i]
            j = track_to_point.get(i)
            if j is None or i in merged:
                tr.hits = 0
                tr.misses += 1
                tr.lifecycle = COASTING
                limit = p.max_coast if tr.confirmed else self._tentative_max_coast
                if tr.misses > limit or i in merged:
                    tr.lifecycle = DEAD
                    dead.append(i)
                    if tr.seed is not None:
                        self._n_seeded -= 1
                    if tr.user_id is not None:
                        self.registry.release(tr.track_id)
            else:
                tr.hits += 1
                tr.misses = 0
                if tr.user_id is not None:
                    tr.lifecycle = IDENTIFIED
                else:
                    if not tr.confirmed and tr.hits >= p.confirm_hits:
                        tr.confirmed = True
                    if tr.confirmed:
                        tr.lifecycle = CONFIRMED
                        # ducks only count while someone is waiting to be bound
                        if self.registry.pending:
                            self._calibrate(tr, float(Z[j, 2]), t)
                            if tr.user_id is not None:
                                tr.lifecycle = IDENTIFIED
                    else:
                        tr.lifecycle = TENTATIVE
                if tr.user_id is not None:
                    hist = self.history.get(tr.user_id)
                    if hist is None:
                        hist = self.history[tr.user_id] = deque(maxlen=p.history_len)
                    hist.append((t, Point3(row[0], row[1], row[2])))
            out.append(TrackOutput(tr.track_id, tr.user_id, (row[0], row[1], row[2]),
                                   (row[3], row[4], row[5]), tr.lifecycle))

        if dead:
            gone = set(dead)
            keep = [i for i in range(len(tracks)) if i not in gone]
            tracks = [tracks[i] for i in keep]
            S = S[keep]

        if len(pairs) < len(Z):
            S = self._spawn(tracks, S, Z, set(track_to_point.values()), t, out)

        self._tracks, self._S = tracks, S
        self.last_t = t
        return FrameOutput(frame.seq, t, tuple(out))

    def _spawn(self, tracks, S, Z, matched_cols, t, out):
        """Start tentative tracks on leftover in-room points."""
        # leftovers are few (clutter, new arrivals): plain Python beats numpy here
        inside = self.room.contains_point
        left = [z for j, z in enumerate(Z.tolist()) if j not in matched_cols and inside(*z)]
        d2 = self.params.spawn_exclusion ** 2
        if left and d2 > 0:
            held = S[[i for i, tr in enumerate(tracks) if tr.confirmed], :3].tolist()
            left = [z for z in left if all(
                (z[0] - h[0]) ** 2 + (z[1] - h[1]) ** 2 + (z[2] - h[2]) ** 2 > d2 for h in held)]
        if not left:
            return S
        Zs = np.array(left)
        for z in Zs:
            tr = _Track(self.next_track_id, seed=(z, t))
            self.next_track_id += 1
            tracks.append(tr)
            self._n_seeded += 1
            out.append(TrackOutput(tr.track_id, None, tuple(z.tolist()), (0.0, 0.0, 0.0), tr.lifecycle))
        new = np.zeros((len(Zs), kalman.ISO_DIM))
        new[:, :3] = Zs
        new[:, 6:] = self._C0
        return np.concatenate([S, new])

    def _duplicates(self, rows: list, track_to_point: dict) -> set:
        """Rows of confirmed tracks shadowing a better track of the same target.

        Ranking: identified first, then matched this frame, then older.
        Two identified tracks are never merged.
        """
        d = self.params.merge_distance
        if d <= 0:
            return set()
        tracks = self._tracks
        conf = [i for i, tr in enumerate(tracks) if tr.confirmed]
        if len(conf) < 2:
            return set()
        xs = sorted([rows[i][0] for i in conf])
        if min(map(operator.sub, xs[1:], xs[:-1])) >= d:
            return set()
        # sweep along x so only pairs within d in x are compared
        live = sorted((rows[i][0], i) for i in conf)
        d2 = d * d
        out = set()
        for k, (x, a) in enumerate(live):
            pa = rows[a]
            for x2, b in live[k + 1:]:
                if x2 - x >= d:
                    break
                pb = rows[b]
                if (pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2 >= d2:
                    continue
                if a in out or b in out:
                    continue
                if tracks[a].user_id is not None and tracks[b].user_id is not None:
                    continue
                out.add(max(a, b, key=lambda i: (tracks[i].user_id is None, i not in track_to_point,
                                                  tracks[i].track_id)))
        return out

    def _calibrate(self, tr: _Track, h: float, t: int) -> None:
        tr.detector, event = duck_step(tr.detector or DuckDetector(self.duck), h, t)
        if event is None:
            return
        if self.n_identified() >= self.params.max_users:
            tr.detector = tr.detector.reset()
            return
        self.registry, uid = bind_on_complete(self.registry, tr.track_id, t)
        if uid is None:
            # nobody waiting: allow this track to calibrate again later
            tr.detector = tr.detector.reset()
        tr.user_id = uid

    def run(self, frames: Iterable[MarkerFrame]) -> Iterator[FrameOutput]:
        for f in frames:
            yield self.step(f)


# ---------------------------------------------------------------------------
# output log
# ---------------------------------------------------------------------------


def serialize_output(out: FrameOutput) -> str:
    tracks = [
        {
            "id": tr.track_id,
            "user": tr.user_id,
            "state": tr.lifecycle.value,
            "pos": list(tr.position),
            "vel": list(tr.velocity),
        }
        for tr in out.tracks
    ]
    return json.dumps({"seq": out.seq, "t": out.t, "tracks": tracks}, separators=(",", ":"))


def parse_output(line: str) -> FrameOutput:
    try:
        obj = json.loads(line)
        tracks = tuple(
            TrackOutput(d["id"], d["user"], tuple(d["pos"]), tuple(d["vel"]), Lifecycle(d["state"]))
            for d in obj["tracks"]
        )
        return FrameOutput(obj["seq"], obj["t"], tracks)
    except json.JSONDecodeError as e:
        raise FrameParseError(f"not valid JSON: {e}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise FrameParseError(f"malformed output record: {e!r}") from None


def read_outputs(lines: Iterable[str]) -> Iterator[FrameOutput]:
    for line in lines:
        if line.strip():
            yield parse_output(line)
