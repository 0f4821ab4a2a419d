"""Tracking quality against simulator ground truth.

``rmse`` is the per-axis root mean square position error, so a raw sensor
with independent per-coordinate noise ``sigma`` scores ``sigma``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .frames import TruthRecord
from .tracker import FrameOutput, Lifecycle


class SeqMismatchError(ValueError):
    """Outputs and truth do not cover the same frames."""


@dataclass(frozen=True)
class UserMetrics:
    rmse: float
    matched_frames: int
    missed_frames: int


@dataclass(frozen=True)
class RuntimeStats:
    frames_processed: int
    wall_time: float
    frames_per_second: float


@dataclass(frozen=True)
class MetricsReport:
    per_user: dict[int, UserMetrics] = field(default_factory=dict)
    id_switches: int = 0
    purity: float = 1.0
    # zero means purity is vacuous
    purity_denominator: int = 0
    first_identified_ms: dict[int, int] = field(default_factory=dict)
    runtime_stats: Optional[RuntimeStats] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_user"] = {int(k): v for k, v in d["per_user"].items()}
        return d

    def table(self) -> str:
        lines = [f"{'user':>6} {'rmse':>10} {'matched':>8} {'missed':>8} {'first_id_ms':>12}"]
        for uid, m in sorted(self.per_user.items()):
            first = self.first_identified_ms.get(uid, "-")
            lines.append(f"{uid:>6} {m.rmse:>10.5f} {m.matched_frames:>8} {m.missed_frames:>8} {first:>12}")
        flag = "" if self.purity_denominator else " (no identified outputs)"
        lines.append(f"id_switches={self.id_switches} purity={self.purity:.4f}{flag}")
        if self.runtime_stats is not None:
            r = self.runtime_stats
            lines.append(f"frames={r.frames_processed} wall={r.wall_time:.3f}s fps={r.frames_per_second:.0f}")
        return "\n".join(lines)


def _nearest_user(pos, users: dict, tol: float) -> Optional[int]:
    best, best_d = None, tol
    for uid, p in sorted(users.items()):
        d = math.dist(pos, p)
        if d <= best_d:
            best, best_d = uid, d
    return best


def evaluate(
    outputs: Iterable[FrameOutput],
    truth: Iterable[TruthRecord],
    assignment_tolerance: float = 0.5,
    runtime: Optional[RuntimeStats] = None,
) -> MetricsReport:
    """Score identified tracker outputs against ground truth.

    An output counts as pure when the true user position nearest to it
    (within ``assignment_tolerance``) belongs to the user it is bound to.
    An ID switch is any frame in which a user's identity shows up on a
    different track than the last time it was seen.
    """
    sq = {}
    matched = {}
    missed = {}
    first = {}
    last_track = {}
    switches = 0
    pure = total = 0

    for out, tr in _paired(outputs, truth):
        seen = set()
        for o in out.tracks:
            uid = o.user_id
            if uid is None or o.lifecycle is Lifecycle.DEAD:
                continue
            seen.add(uid)
            first.setdefault(uid, out.t)
            if uid in last_track and last_track[uid] != o.track_id:
                switches += 1
            last_track[uid] = o.track_id
            total += 1
            if _nearest_user(o.position, tr.users, assignment_tolerance) == uid:
                pure += 1
            p = tr.users.get(uid)
            if p is not None:
                e = np.subtract(o.position, p)
                sq[uid] = sq.get(uid, 0.0) + float(e @ e)
                matched[uid] = matched.get(uid, 0) + 1
        for uid in tr.users:
            if uid in first and uid not in seen:
                missed[uid] = missed.get(uid, 0) + 1

    per_user = {
        uid: UserMetrics(
            rmse=math.sqrt(sq.get(uid, 0.0) / (3 * matched[uid])) if matched.get(uid) else 0.0,
            matched_frames=matched.get(uid, 0),
            missed_frames=missed.get(uid, 0),
        )
        for uid in sorted(first)
    }
    return MetricsReport(
        per_user=per_user,
        id_switches=switches,
        purity=pure / total if total else 1.0,
        purity_denominator=total,
        first_identified_ms=first,
        runtime_stats=runtime,
    )


def _paired(outputs, truth):
    outputs, truth = iter(outputs), iter(truth)
    while True:
        o = next(outputs, None)
        t = next(truth, None)
        if o is None and t is None:
            return
        if o is None or t is None:
            raise SeqMismatchError("outputs and truth have different lengths")
        if o.seq != t.seq:
            raise SeqMismatchError(f"output seq {o.seq} paired with truth seq {t.seq}")
        yield o, t
