"""Duck-gesture calibration and identity binding.

A user announces themselves by ducking a fixed number of times while
standing still.  :class:`DuckDetector` watches one track's height series
for that signature; :class:`IdentityRegistry` hands out registered user ids
in first-in first-out order as tracks complete it.
"""
from __future__ import annotations

import logging
import statistics
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, PositiveInt

from ._schema import STRICT

log = logging.getLogger(__name__)


class Phase(str, Enum):
    STANDING = "standing"
    DOWN = "down"
    UP = "up"


class DuckParams(BaseModel):
    model_config = STRICT

    dip_fraction: float = Field(0.15, gt=0.0, lt=1.0)
    min_cycles: PositiveInt = 5
    max_window_ms: PositiveInt = 10_000
    baseline_frames: PositiveInt = 50


@dataclass(frozen=True)
class CalibrationComplete:
    t: float
    cycles: int


@dataclass(frozen=True)
class DuckDetector:
    """Hysteresis state machine counting duck cycles.

    The first ``baseline_frames`` samples set the standing height (their
    median).  Dropping below ``baseline * (1 - dip_fraction)`` starts a dip;
    rising back above ``baseline * (1 - dip_fraction / 2)`` completes a
    cycle.  All ``min_cycles`` cycles must finish within ``max_window_ms``
    of the first dip, otherwise the count restarts.
    """

    params: DuckParams = field(default_factory=DuckParams)
    baseline_h: Optional[float] = None
    phase: Phase = Phase.STANDING
    cycles: int = 0
    window_start: Optional[float] = None
    fired: bool = False
    samples: tuple[float, ...] = ()

    @property
    def down_threshold(self) -> float:
        return self.baseline_h * (1.0 - self.params.dip_fraction)

    @property
    def up_threshold(self) -> float:
        return self.baseline_h * (1.0 - 0.5 * self.params.dip_fraction)

    def reset(self) -> "DuckDetector":
        """Re-arm after a completed calibration, keeping the baseline."""
        return replace(self, phase=Phase.STANDING, cycles=0, window_start=None, fired=False)


def duck_step(d: DuckDetector, h: float, t: float) -> tuple[DuckDetector, Optional[CalibrationComplete]]:
    """Feed one height sample; returns the new detector and an optional event."""
    if d.fired:
        return d, None
    if d.baseline_h is None:
        samples = d.samples + (float(h),)
        if len(samples) < d.params.baseline_frames:
            return replace(d, samples=samples), None
        base = statistics.median(samples)
        if base <= 0:
            # cannot express a dip as a fraction of a non-positive height
            return replace(d, samples=samples[1:]), None
        return replace(d, samples=(), baseline_h=base), None

    phase, cycles, start = d.phase, d.cycles, d.window_start
    if start is not None and t - start > d.params.max_window_ms:
        # window expired: a dip in progress opens the next window
        cycles = 0
        start = t if phase is Phase.DOWN else None
        if phase is Phase.UP:
            phase = Phase.STANDING

    if phase is not Phase.DOWN:
        if h < d.down_threshold:
            phase = Phase.DOWN
            if start is None:
                start = t
    elif h > d.up_threshold:
        phase = Phase.UP
        cycles += 1
        if cycles >= d.params.min_cycles:
            done = replace(d, phase=phase, cycles=cycles, window_start=start, fired=True)
            return done, CalibrationComplete(t, cycles)

    if phase is d.phase and cycles == d.cycles and start == d.window_start:
        return d, None
    return replace(d, phase=phase, cycles=cycles, window_start=start), None


class DoubleBindError(ValueError):
    pass


@dataclass
class IdentityRegistry:
    """Users waiting for calibration and the track each bound user owns."""

    pending: deque = field(default_factory=deque)
    bound: dict[int, int] = field(default_factory=dict)

    def register(self, user_id: int) -> None:
        if user_id in self.pending or user_id in self.bound.values():
            raise ValueError(f"user {user_id} is already registered")
        self.pending.append(user_id)

    def user_of(self, track_id: int) -> Optional[int]:
        return self.bound.get(track_id)

    def release(self, track_id: int) -> Optional[int]:
        """Unbind a track; its user rejoins the back of the queue."""
        uid = self.bound.pop(track_id, None)
        if uid is not None:
            self.pending.append(uid)
        return uid

    def copy(self) -> "IdentityRegistry":
        return IdentityRegistry(deque(self.pending), dict(self.bound))


def bind_on_complete(r: IdentityRegistry, track_id: int, t: float) -> tuple[IdentityRegistry, Optional[int]]:
    """Bind the longest-waiting registered user to ``track_id``.

    Returns ``(registry, None)`` unchanged if nobody is waiting.
    """
    if track_id in r.bound:
        raise DoubleBindError(f"track {track_id} is already bound to user {r.bound[track_id]}")
    if not r.pending:
        log.info("track %s completed calibration at t=%s but no user is pending", track_id, t)
        return r, None
    out = r.copy()
    uid = out.pending.popleft()
    out.bound[track_id] = uid
    return out, uid
