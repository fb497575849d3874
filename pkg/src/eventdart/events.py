"""Event streams, bounding boxes, annotation tracks and their file formats.

Timestamps are integer microseconds everywhere. Polarity is carried through
parsing and serialization but no downstream computation reads it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    InvalidBox,
    InvalidTimestamp,
    OrderViolation,
    OutOfBounds,
    OverlapError,
    ParseError,
    TruncatedRecord,
)

DEFAULT_INTERVAL_US = 10_000


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Immutable, time-sorted sequence of events from one sensor.

    Stored column-wise: ``x``/``y`` are int32 pixel coordinates, ``t`` int64
    microseconds and ``p`` uint8 polarity.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int
    source: str = ""

    def __post_init__(self):
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise ValueError("event columns differ in length")
        object.__setattr__(self, "x", _frozen(self.x, np.int32))
        object.__setattr__(self, "y", _frozen(self.y, np.int32))
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "p", _frozen(self.p, np.uint8))

    @classmethod
    def from_arrays(cls, x, y, t, p=None, *, width: int, height: int,
                    source: str = "", validate: bool = True) -> "EventStream":
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        p = np.zeros(len(x), np.uint8) if p is None else np.asarray(p)
        if validate:
            _check_bounds(x, y, width, height)
            if len(t) and t[0] < 0:
                raise InvalidTimestamp("negative timestamp")
            if np.any(np.diff(t) < 0):
                i = int(np.argmax(np.diff(t) < 0)) + 1
                raise OrderViolation(f"event {i} is earlier than its predecessor")
        return cls(x, y, t, p, width, height, source)

    @classmethod
    def empty(cls, width: int, height: int, source: str = "") -> "EventStream":
        z = np.zeros(0, np.int64)
        return cls(z, z, z, z, width, height, source)

    @classmethod
    def from_events(cls, events: Sequence[Event], *, width: int, height: int,
                    source: str = "") -> "EventStream":
        if not events:
            return cls.empty(width, height, source)
        arr = np.array([(e.x, e.y, e.t, e.p) for e in events], dtype=np.int64)
        return cls.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                               width=width, height=height, source=source)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.p, other.p))

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self) else 0

    def select(self, index) -> "EventStream":
        """Subsequence by boolean mask or sorted integer index."""
        return EventStream(self.x[index], self.y[index], self.t[index],
                           self.p[index], self.width, self.height, self.source)

    def slice(self, t0: int, t1: int) -> "EventStream":
        """Events with ``t0 <= t < t1``."""
        if t0 > t1:
            raise ValueError("slice requires t0 <= t1")
        lo = int(np.searchsorted(self.t, t0, side="left"))
        hi = int(np.searchsorted(self.t, t1, side="left"))
        return self.select(np.s_[lo:hi])

    def shifted(self, dt: int) -> "EventStream":
        return EventStream(self.x, self.y, self.t + dt, self.p,
                           self.width, self.height, self.source)


def slice_stream(stream: EventStream, t0: int, t1: int) -> EventStream:
    return stream.slice(t0, t1)


def _check_bounds(x: np.ndarray, y: np.ndarray, width: int, height: int) -> None:
    bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
    if bad.any():
        raise OutOfBounds(int(np.argmax(bad)))


# -- 5-byte AER -------------------------------------------------------------

def parse_aer5(data: bytes, width: int = 34, height: int = 34,
               source: str = "aer5") -> EventStream:
    """Decode the 5-byte-per-event AER layout.

    Byte 0 is x, byte 1 is y, the top bit of byte 2 is polarity and the
    remaining 23 bits of bytes 2-4 form the timestamp in microseconds.
    """
    if len(data) % 5:
        raise TruncatedRecord(f"{len(data)} bytes is not a whole number of 5-byte records")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x = raw[:, 0]
    y = raw[:, 1]
    p = raw[:, 2] >> 7
    t = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    return EventStream.from_arrays(x, y, t, p, width=width, height=height, source=source)


def serialize_aer5(stream: EventStream) -> bytes:
    if len(stream) and (stream.x.max() > 255 or stream.y.max() > 255):
        raise OutOfBounds(int(np.argmax((stream.x > 255) | (stream.y > 255))),
                          "coordinates exceed the 8-bit AER range")
    if len(stream) and stream.t.max() >= 1 << 23:
        raise InvalidTimestamp("timestamp exceeds the 23-bit AER range")
    out = np.empty((len(stream), 5), dtype=np.uint8)
    t = stream.t
    out[:, 0] = stream.x
    out[:, 1] = stream.y
    out[:, 2] = ((stream.p.astype(np.int64) & 1) << 7) | ((t >> 16) & 0x7F)
    out[:, 3] = (t >> 8) & 0xFF
    out[:, 4] = t & 0xFF
    return out.tobytes()


# -- text events ------------------------------------------------------------

def _seconds_to_us(token: str) -> int:
    return int(round(float(token) * 1_000_000))


def parse_text_events(text: str, width: int = 240, height: int = 180,
                      source: str = "text") -> EventStream:
    """Parse ``t_seconds x y p`` lines; blank lines and ``#`` comments are skipped."""
    ts, xs, ys, ps = [], [], [], []
    prev = -1
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(parts)}")
        try:
            t = _seconds_to_us(parts[0])
            x, y, p = int(parts[1]), int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if not math.isfinite(float(parts[0])):
            raise ParseError(lineno, "non-finite timestamp")
        if t < 0:
            raise InvalidTimestamp(f"line {lineno}: negative timestamp")
        if p not in (0, 1):
            raise ParseError(lineno, f"polarity must be 0 or 1, got {p}")
        if not (0 <= x < width and 0 <= y < height):
            raise OutOfBounds(len(ts), f"line {lineno}: ({x}, {y}) outside {width}x{height}")
        if t < prev:
            raise OrderViolation(f"line {lineno}: timestamp goes backwards")
        prev = t
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
    return EventStream.from_arrays(xs, ys, ts, ps, width=width, height=height,
                                   source=source, validate=False)


def format_text_events(stream: EventStream) -> str:
    lines = [f"{t // 1_000_000}.{t % 1_000_000:06d} {x} {y} {p}"
             for x, y, t, p in zip(stream.x.tolist(), stream.y.tolist(),
                                   stream.t.tolist(), stream.p.tolist())]
    return "\n".join(lines) + ("\n" if lines else "")


def read_events(path, width: int | None = None, height: int | None = None) -> EventStream:
    """Load an event file, choosing the format from the suffix.

    ``.bin``/``.aer`` files use the 5-byte layout (default 34x34 sensor),
    anything else is read as text (default 240x180 sensor).
    """
    path = Path(path)
    if path.suffix.lower() in (".bin", ".aer"):
        return parse_aer5(path.read_bytes(), width or 34, height or 34, source=path.name)
    return parse_text_events(path.read_text(), width or 240, height or 180, source=path.name)


def write_events(stream: EventStream, path) -> None:
    path = Path(path)
    if path.suffix.lower() in (".bin", ".aer"):
        path.write_bytes(serialize_aer5(stream))
    else:
        path.write_text(format_text_events(stream))


# -- boxes and annotations --------------------------------------------------

@dataclass(frozen=True)
class BoundingBox:
    """Inclusive integer pixel bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise InvalidBox(f"inverted box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, x, y):
        """Membership test; works elementwise on arrays."""
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)

    def padded(self, px: int, py: int, width: int, height: int) -> "BoundingBox":
        """Grow by ``(px, py)`` on every side, clipped to a ``width x height`` sensor."""
        return BoundingBox(max(self.x_min - px, 0), max(self.y_min - py, 0),
                           min(self.x_max + px, width - 1), min(self.y_max + py, height - 1))

    def clipped(self, width: int, height: int) -> "BoundingBox":
        return BoundingBox(min(max(self.x_min, 0), width - 1), min(max(self.y_min, 0), height - 1),
                           min(max(self.x_max, 0), width - 1), min(max(self.y_max, 0), height - 1))

    @classmethod
    def around(cls, xs, ys) -> "BoundingBox":
        return cls(int(np.min(xs)), int(np.min(ys)), int(np.max(xs)), int(np.max(ys)))


@dataclass(frozen=True)
class AnnotationInterval:
    t_start: int
    t_end: int
    box: Optional[BoundingBox]


@dataclass(frozen=True)
class AnnotationTrack:
    """Sorted, non-overlapping half-open intervals ``[t_start, t_end)``."""

    intervals: tuple[AnnotationInterval, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ivs = tuple(sorted(self.intervals, key=lambda iv: iv.t_start))
        for iv in ivs:
            if iv.t_end <= iv.t_start:
                raise OverlapError(f"empty interval [{iv.t_start}, {iv.t_end})")
        for a, b in zip(ivs, ivs[1:]):
            if b.t_start < a.t_end:
                raise OverlapError(f"[{a.t_start}, {a.t_end}) overlaps [{b.t_start}, {b.t_end})")
        object.__setattr__(self, "intervals", ivs)

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def box_at(self, t: int) -> Optional[BoundingBox]:
        starts = [iv.t_start for iv in self.intervals]
        i = int(np.searchsorted(starts, t, side="right")) - 1
        if i >= 0 and t < self.intervals[i].t_end:
            return self.intervals[i].box
        return None


def parse_annotations(text: str) -> AnnotationTrack:
    """Parse ``t_start t_end x_min y_min x_max y_max`` or ``t_start t_end -`` lines."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            t0, t1 = int(parts[0]), int(parts[1])
            if len(parts) == 3 and parts[2] == "-":
                box = None
            elif len(parts) == 6:
                box = BoundingBox(*(int(v) for v in parts[2:]))
            else:
                raise ParseError(lineno, "expected 3 or 6 fields")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, (ParseError, InvalidBox)):
                raise
            raise ParseError(lineno, str(exc)) from None
        if t0 < 0:
            raise InvalidTimestamp(f"line {lineno}: negative timestamp")
        out.append(AnnotationInterval(t0, t1, box))
    return AnnotationTrack(tuple(out))


def format_annotations(track: AnnotationTrack) -> str:
    lines = []
    for iv in track:
        if iv.box is None:
            lines.append(f"{iv.t_start} {iv.t_end} -")
        else:
            lines.append(f"{iv.t_start} {iv.t_end} " + " ".join(map(str, iv.box.as_tuple())))
    return "\n".join(lines) + ("\n" if lines else "")
