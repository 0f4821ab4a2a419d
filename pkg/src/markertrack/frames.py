"""Marker frames, room geometry and the line-delimited frame log format.

A frame log holds one JSON record per line::

    {"seq":0,"t":0,"points":[[0.0,0.0,5.5]]}

Coordinates are written with Python's shortest round-trip float repr, so
``parse_frame(serialize_frame(f)) == f`` bit for bit.  The ground-truth
sidecar written by the simulator pairs line for line with the frame log::

    {"seq":0,"labels":[1,-1],"users":{"1":[0.0,0.0,5.5]}}

``labels[i]`` is the user owning ``points[i]`` (-1 for clutter).  ``users``
carries the noise-free position of every user present in the frame,
including users whose marker was dropped.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence, TextIO

import numpy as np
from pydantic import BaseModel, PositiveFloat

from ._schema import STRICT


class FrameParseError(ValueError):
    """A frame log record is malformed."""


class FrameValidationError(ValueError):
    """A frame log record is well formed but violates a frame invariant."""


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class RoomBounds(BaseModel):
    """Closed tracking volume centred on the floor.

    Defaults describe a 16 x 20 x 10 room: x in [-8, 8], y in [-10, 10],
    z in [0, 10].
    """

    model_config = STRICT

    half_x: PositiveFloat = 8.0
    half_y: PositiveFloat = 10.0
    height: PositiveFloat = 10.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed volume."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return (
            (np.abs(p[:, 0]) <= self.half_x)
            & (np.abs(p[:, 1]) <= self.half_y)
            & (p[:, 2] >= 0.0)
            & (p[:, 2] <= self.height)
        )

    def contains_point(self, x: float, y: float, z: float) -> bool:
        return abs(x) <= self.half_x and abs(y) <= self.half_y and 0.0 <= z <= self.height


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise FrameValidationError(f"points must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0][0])
        raise FrameValidationError(f"points[{bad}] has a non-finite coordinate")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MarkerFrame:
    """One sensor report: an unordered set of anonymous 3D points.

    ``points`` is stored as a read-only ``(n, 3)`` float64 array.  Point
    order carries no meaning.
    """

    seq: int
    t: int
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    def __post_init__(self):
        if isinstance(self.seq, bool) or not isinstance(self.seq, (int, np.integer)) or self.seq < 0:
            raise FrameValidationError(f"seq must be a non-negative integer, got {self.seq!r}")
        if isinstance(self.t, bool) or not isinstance(self.t, (int, np.integer)) or self.t < 0:
            raise FrameValidationError(f"t must be a non-negative integer, got {self.t!r}")
        object.__setattr__(self, "seq", int(self.seq))
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "points", _as_points(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarkerFrame):
            return NotImplemented
        return (
            self.seq == other.seq
            and self.t == other.t
            and self.points.shape == other.points.shape
            # bitwise comparison: -0.0 != 0.0 here, on purpose
            and self.points.tobytes() == other.points.tobytes()
        )

    def __hash__(self) -> int:
        return hash((self.seq, self.t, self.points.tobytes()))

    def __repr__(self) -> str:
        return f"MarkerFrame(seq={self.seq}, t={self.t}, n_points={len(self.points)})"


def _require_uint(obj: dict, key: str) -> int:
    if key not in obj:
        raise FrameParseError(f"missing field {key!r}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise FrameParseError(f"field {key!r} must be a non-negative integer, got {v!r}")
    return v


def parse_frame(line: str) -> MarkerFrame:
    """Decode one frame log record.

    Raises FrameParseError naming the offending field for structural
    problems and FrameValidationError for non-finite coordinates.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FrameParseError(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise FrameParseError("record must be a JSON object")
    seq = _require_uint(obj, "seq")
    t = _require_uint(obj, "t")
    if "points" not in obj:
        raise FrameParseError("missing field 'points'")
    raw = obj["points"]
    if not isinstance(raw, list):
        raise FrameParseError("field 'points' must be a list")
    for i, p in enumerate(raw):
        if not isinstance(p, list) or len(p) != 3:
            raise FrameParseError(f"points[{i}] must be a list of 3 numbers")
        for k, c in enumerate(p):
            if isinstance(c, bool) or not isinstance(c, (int, float)):
                raise FrameParseError(f"points[{i}][{k}] must be a number, got {c!r}")
    return MarkerFrame(seq, t, raw)


def _fmt(v: float) -> str:
    # shortest round-trip repr; json would reject NaN/inf anyway
    return repr(float(v))


def serialize_frame(frame: MarkerFrame) -> str:
    """Encode a frame as one log record (no trailing newline)."""
    pts = ",".join(f"[{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}]" for p in frame.points.tolist())
    return f'{{"seq":{frame.seq},"t":{frame.t},"points":[{pts}]}}'


def validate_in_room(frame: MarkerFrame, bounds: RoomBounds = RoomBounds()) -> list[int]:
    """Indices of points lying outside the closed room volume."""
    return [int(i) for i in np.flatnonzero(~bounds.contains(frame.points))]


# ---------------------------------------------------------------------------
# Ground-truth sidecar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruthRecord:
    seq: int
    labels: tuple[int, ...]
    users: dict[int, Point3] = field(default_factory=dict)


def serialize_truth(rec: TruthRecord) -> str:
    labels = ",".join(str(int(v)) for v in rec.labels)
    users = ",".join(
        f'"{uid}":[{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}]' for uid, p in sorted(rec.users.items())
    )
    return f'{{"seq":{rec.seq},"labels":[{labels}],"users":{{{users}}}}}'


def parse_truth(line: str) -> TruthRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FrameParseError(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise FrameParseError("record must be a JSON object")
    seq = _require_uint(obj, "seq")
    labels = obj.get("labels")
    if not isinstance(labels, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in labels):
        raise FrameParseError("field 'labels' must be a list of integers")
    users = {}
    for k, v in (obj.get("users") or {}).items():
        if not isinstance(v, list) or len(v) != 3:
            raise FrameParseError(f"users[{k!r}] must be a list of 3 numbers")
        users[int(k)] = Point3(*(float(c) for c in v))
    return TruthRecord(seq, tuple(labels), users)


# ---------------------------------------------------------------------------
# File helpers
# ---------------------------------------------------------------------------


def read_frames(lines: Iterable[str]) -> Iterator[MarkerFrame]:
    for line in lines:
        if line.strip():
            yield parse_frame(line)


def write_frames(frames: Iterable[MarkerFrame], fh: TextIO) -> int:
    n = 0
    for f in frames:
        fh.write(serialize_frame(f))
        fh.write("\n")
        n += 1
    return n


def read_truth(lines: Iterable[str]) -> Iterator[TruthRecord]:
    for line in lines:
        if line.strip():
            yield parse_truth(line)


def write_truth(records: Sequence[TruthRecord], fh: TextIO) -> int:
    for r in records:
        fh.write(serialize_truth(r))
        fh.write("\n")
    return len(records)
