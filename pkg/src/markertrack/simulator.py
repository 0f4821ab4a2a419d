"""Deterministic multi-user scenario generator.

Every user wears one marker.  A user appears at ``spawn_time_ms`` at their
first waypoint, stands still, optionally performs the duck calibration at
``calib_time_ms`` (smooth half-cosine dips) and then walks the waypoint
polyline at constant speed, stopping at the last waypoint.

:func:`generate` produces clean frames plus the ground-truth sidecar;
:func:`perturb` adds sensor noise, dropouts, clutter and per-frame
shuffling from an explicitly seeded generator.
"""
from __future__ import annotations

import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, NonNegativeInt, PositiveFloat, PositiveInt, model_validator

from ._schema import STRICT
from .frames import MarkerFrame, Point3, RoomBounds, TruthRecord

CLUTTER = -1


class Motion(str, Enum):
    ABSENT = "absent"
    STANDING = "standing"
    DUCKING = "ducking"
    WALKING = "walking"
    ARRIVED = "arrived"


class UserSpec(BaseModel):
    model_config = STRICT

    user_id: NonNegativeInt
    height: PositiveFloat
    waypoints: list[tuple[float, float]] = Field(min_length=1)
    spawn_time_ms: NonNegativeInt = 0
    walk_speed: PositiveFloat = 1.0
    calib_time_ms: Optional[NonNegativeInt] = None

    @model_validator(mode="after")
    def _calib_after_spawn(self):
        if self.calib_time_ms is not None and self.calib_time_ms < self.spawn_time_ms:
            raise ValueError("calib_time_ms must not precede spawn_time_ms")
        return self


class ScenarioConfig(BaseModel):
    model_config = STRICT

    users: list[UserSpec] = []
    duration_ms: PositiveInt = 1000
    frame_interval_ms: PositiveInt = 10
    room: RoomBounds = RoomBounds()
    duck_count: PositiveInt = 5
    duck_depth: float = Field(0.25, gt=0.0, lt=1.0)
    duck_cycle_ms: PositiveInt = 800

    @model_validator(mode="after")
    def _check_users(self):
        seen = set()
        for k, u in enumerate(self.users):
            if u.user_id in seen:
                raise ValueError(f"users.{k}.user_id: duplicate id {u.user_id}")
            seen.add(u.user_id)
            if not u.height < self.room.height:
                raise ValueError(f"users.{k}.height: must be below room height {self.room.height}")
            for w, (x, y) in enumerate(u.waypoints):
                if abs(x) > self.room.half_x or abs(y) > self.room.half_y:
                    raise ValueError(f"users.{k}.waypoints.{w}: ({x}, {y}) lies outside the room")
        return self


class NoiseConfig(BaseModel):
    model_config = STRICT

    sigma_m: float = Field(0.0, ge=0.0)
    dropout_p: float = Field(0.0, ge=0.0, lt=1.0)
    clutter_rate: float = Field(0.0, ge=0.0)
    shuffle: bool = False
    seed: int = 0


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


def walk_start(u: UserSpec, sc: ScenarioConfig) -> int:
    if u.calib_time_ms is None:
        return u.spawn_time_ms
    return u.calib_time_ms + sc.duck_count * sc.duck_cycle_ms


def _legs(u: UserSpec):
    """Cumulative polyline length at each waypoint."""
    w = np.asarray(u.waypoints, dtype=float)
    seg = np.hypot(*np.diff(w, axis=0).T) if len(w) > 1 else np.empty(0)
    return w, np.concatenate([[0.0], np.cumsum(seg)])


def motion_at(u: UserSpec, sc: ScenarioConfig, t: float) -> Motion:
    if t < u.spawn_time_ms:
        return Motion.ABSENT
    start = walk_start(u, sc)
    if t < start:
        if u.calib_time_ms is not None and t >= u.calib_time_ms:
            return Motion.DUCKING
        return Motion.STANDING
    _, cum = _legs(u)
    if u.walk_speed * (t - start) / 1000.0 >= cum[-1]:
        return Motion.ARRIVED
    return Motion.WALKING


def position_at(u: UserSpec, sc: ScenarioConfig, t: float) -> Optional[Point3]:
    """Noise-free marker position of ``u`` at time ``t`` (ms), None if absent."""
    if t < u.spawn_time_ms:
        return None
    w, cum = _legs(u)
    start = walk_start(u, sc)
    h = u.height
    if t < start:
        x, y = w[0]
        if u.calib_time_ms is not None and t >= u.calib_time_ms:
            phase = 2.0 * math.pi * (t - u.calib_time_ms) / sc.duck_cycle_ms
            h = u.height * (1.0 - sc.duck_depth * 0.5 * (1.0 - math.cos(phase)))
        return Point3(float(x), float(y), float(h))
    s = u.walk_speed * (t - start) / 1000.0
    if s >= cum[-1]:
        x, y = w[-1]
    else:
        k = int(np.searchsorted(cum, s, side="right")) - 1
        f = (s - cum[k]) / (cum[k + 1] - cum[k])
        x, y = w[k] + f * (w[k + 1] - w[k])
    return Point3(float(x), float(y), float(h))


def time_since_turn(u: UserSpec, sc: ScenarioConfig, t: float) -> float:
    """Milliseconds since the walking user last changed velocity."""
    start = walk_start(u, sc)
    if t < start:
        return 0.0
    _, cum = _legs(u)
    s = u.walk_speed * (t - start) / 1000.0
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(k, len(cum) - 1)
    return t - (start + cum[k] / u.walk_speed * 1000.0)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate(sc: ScenarioConfig) -> tuple[list[MarkerFrame], list[TruthRecord]]:
    """Noise-free frames (one point per present user) and their labels."""
    frames, truth = [], []
    n = -(-sc.duration_ms // sc.frame_interval_ms)
    for seq in range(n):
        t = seq * sc.frame_interval_ms
        pts, labels, users = [], [], {}
        for u in sc.users:
            p = position_at(u, sc, t)
            if p is None:
                continue
            pts.append(p)
            labels.append(u.user_id)
            users[u.user_id] = p
        frames.append(MarkerFrame(seq, t, pts))
        truth.append(TruthRecord(seq, tuple(labels), users))
    return frames, truth


def perturb(
    frames: list[MarkerFrame], truth: list[TruthRecord], nc: NoiseConfig, room: RoomBounds = RoomBounds()
) -> tuple[list[MarkerFrame], list[TruthRecord]]:
    """Apply sensor noise, dropouts, clutter and shuffling.

    Noise, dropout and clutter draw from one stream and the shuffle from
    another, so toggling ``shuffle`` changes only point order.
    """
    noise_ss, perm_ss = np.random.SeedSequence(nc.seed).spawn(2)
    rng = np.random.default_rng(noise_ss)
    prng = np.random.default_rng(perm_ss)
    lo = np.array([-room.half_x, -room.half_y, 0.0])
    hi = np.array([room.half_x, room.half_y, room.height])

    out_f, out_t = [], []
    for f, tr in zip(frames, truth):
        pts = np.array(f.points)
        labels = np.asarray(tr.labels, dtype=int)
        n = len(pts)
        noise = rng.normal(0.0, 1.0, size=(n, 3))
        keep = rng.random(n) >= nc.dropout_p
        n_clutter = rng.poisson(nc.clutter_rate)
        clutter = rng.uniform(lo, hi, size=(n_clutter, 3))
        if nc.sigma_m > 0:
            pts = pts + nc.sigma_m * noise
        pts = np.concatenate([pts[keep], clutter])
        labels = np.concatenate([labels[keep], np.full(n_clutter, CLUTTER)])
        if nc.shuffle:
            perm = prng.permutation(len(pts))
            pts, labels = pts[perm], labels[perm]
        out_f.append(MarkerFrame(f.seq, f.t, pts))
        out_t.append(TruthRecord(tr.seq, tuple(labels.tolist()), tr.users))
    return out_f, out_t


# ---------------------------------------------------------------------------
# stock scenarios
# ---------------------------------------------------------------------------


def _loop(x0: float, x1: float, y0: float, y1: float, laps: int) -> list[tuple[float, float]]:
    corners = [(x0, y0), (x0, y1), (x1, y1), (x1, y0)]
    return corners * laps + [corners[0]]


def three_user_scenario(duration_ms: int = 100_000) -> ScenarioConfig:
    """Three users in separate lanes of the room, calibrating one after another."""
    return ScenarioConfig(
        duration_ms=duration_ms,
        users=[
            UserSpec(user_id=1, height=5.5, spawn_time_ms=0, calib_time_ms=1_000,
                     walk_speed=1.2, waypoints=_loop(-6.0, -3.5, -8.0, 8.0, 4)),
            UserSpec(user_id=2, height=5.9, spawn_time_ms=4_000, calib_time_ms=6_000,
                     walk_speed=1.0, waypoints=_loop(3.5, 6.0, 8.0, -8.0, 4)),
            UserSpec(user_id=3, height=5.2, spawn_time_ms=9_000, calib_time_ms=11_000,
                     walk_speed=0.8, waypoints=_loop(-1.0, 1.0, -7.0, 7.0, 4)),
        ],
    )


def three_user_noise(seed: int = 7, shuffle: bool = True) -> NoiseConfig:
    return NoiseConfig(sigma_m=0.05, dropout_p=0.01, clutter_rate=0.2, shuffle=shuffle, seed=seed)


def crowd_scenario(n_users: int = 10, duration_ms: int = 20_000) -> ScenarioConfig:
    """``n_users`` walkers on parallel lanes, no calibration."""
    users = []
    lanes = np.linspace(-7.0, 7.0, n_users) if n_users > 1 else [0.0]
    for k, x in enumerate(lanes):
        x = float(x)
        users.append(UserSpec(
            user_id=k + 1, height=5.0 + 0.1 * (k % 8), walk_speed=0.8 + 0.05 * k,
            waypoints=[(x, -9.0), (x, 9.0)] * 8,
        ))
    return ScenarioConfig(users=users, duration_ms=duration_ms)
