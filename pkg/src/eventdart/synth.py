"""Synthetic event scenes with known geometry, used as ground-truth oracles.

Every outline pixel of a moving polygon fires Poisson events; uniform
background noise is added on top. Alongside the stream the generator returns
per-interval ground-truth boxes and, for each event, the shape-frame
coordinate it came from.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .events import (AnnotationInterval, AnnotationTrack, BoundingBox,
                     DEFAULT_INTERVAL_US, EventStream)

NOISE_ID = -1
TARGET_ID = 0


@dataclass(frozen=True)
class ShapeTrack:
    """A polygon (shape-frame vertices) moving along piecewise-linear waypoints.

    ``waypoints`` are ``(t_us, cx, cy)``; position is clamped before the first
    and after the last. ``hidden`` lists ``[t0, t1)`` spans with no events.
    """

    vertices: tuple[tuple[float, float], ...]
    waypoints: tuple[tuple[int, float, float], ...]
    rotation_rate: float = 0.0  # rad/s
    angle0: float = 0.0
    hidden: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or len(v) < 3 or v.shape[1] != 2:
            raise ConfigError("a shape needs at least three 2-D vertices")
        x, y = v[:, 0], v[:, 1]
        if abs(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)) < 1e-9:
            raise ConfigError("shape has zero area")
        if not self.waypoints:
            raise ConfigError("a shape needs at least one waypoint")

    def pose(self, t: float) -> tuple[float, float, float]:
        wp = np.asarray(self.waypoints, dtype=float)
        cx = float(np.interp(t, wp[:, 0], wp[:, 1]))
        cy = float(np.interp(t, wp[:, 0], wp[:, 2]))
        return cx, cy, self.angle0 + self.rotation_rate * t * 1e-6

    def is_hidden(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.hidden)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    target: ShapeTrack
    width: int = 240
    height: int = 180
    duration_us: int = 1_000_000
    edge_rate: float = 0.05  # events per outline pixel per ms
    noise_rate: float = 0.0  # events per ms over the whole sensor
    distractors: tuple[ShapeTrack, ...] = ()
    step_us: int = 1000
    interval_us: int = DEFAULT_INTERVAL_US

    def __post_init__(self):
        if self.edge_rate < 0 or self.noise_rate < 0:
            raise ConfigError("event rates must be non-negative")
        if self.duration_us <= 0 or self.step_us <= 0 or self.interval_us <= 0:
            raise ConfigError("durations must be positive")


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Per-event provenance: emitting object (-1 noise, 0 target) and shape-frame (u, v)."""

    object_id: np.ndarray
    u: np.ndarray
    v: np.ndarray


def outline_pixels(vertices, cx: float, cy: float, angle: float
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rasterized outline of a posed polygon.

    Returns integer pixel coordinates (N, 2) and, for each pixel, the
    shape-frame coordinate of its centre.
    """
    return _outline(tuple(map(tuple, vertices)), float(cx), float(cy), float(angle))


@lru_cache(maxsize=256)
def _outline(vertices, cx, cy, angle):
    v = np.asarray(vertices, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    world = v @ R.T + [cx, cy]
    pts = []
    for a, b in zip(world, np.roll(world, -1, axis=0)):
        n = max(int(math.ceil(np.hypot(*(b - a)) * 2)), 1)
        f = np.arange(n) / n
        pts.append(a + f[:, None] * (b - a))
    pix = np.floor(np.concatenate(pts) + 0.5).astype(np.int64)
    pix = np.unique(pix, axis=0)
    local = (pix - [cx, cy]) @ R
    u, v = local[:, 0].copy(), local[:, 1].copy()
    for a in (pix, u, v):
        a.flags.writeable = False
    return pix, u, v


def _emit(rng, pix, u, v, rate_per_ms, t0, step_us, obj_id):
    counts = rng.poisson(rate_per_ms * step_us / 1000.0, size=len(pix))
    rep = np.repeat(np.arange(len(pix)), counts)
    n = len(rep)
    return (pix[rep, 0], pix[rep, 1], t0 + rng.integers(0, step_us, size=n),
            rng.integers(0, 2, size=n), np.full(n, obj_id), u[rep], v[rep])


def synth_generate(cfg: SyntheticSceneConfig, seed: int = 0
                   ) -> tuple[EventStream, AnnotationTrack, Correspondence]:
    rng = np.random.default_rng(seed)
    W, H = cfg.width, cfg.height
    cols: list[list[np.ndarray]] = [[] for _ in range(7)]
    shapes = [(TARGET_ID, cfg.target)] + [(k + 1, s) for k, s in enumerate(cfg.distractors)]
    for t0 in range(0, cfg.duration_us, cfg.step_us):
        step = min(cfg.step_us, cfg.duration_us - t0)
        mid = t0 + step / 2
        chunk = []
        for obj_id, shape in shapes:
            if shape.is_hidden(mid):
                continue
            pix, u, v = outline_pixels(shape.vertices, *shape.pose(mid))
            inside = (pix[:, 0] >= 0) & (pix[:, 0] < W) & (pix[:, 1] >= 0) & (pix[:, 1] < H)
            chunk.append(_emit(rng, pix[inside], u[inside], v[inside], cfg.edge_rate,
                               t0, step, obj_id))
        n_noise = rng.poisson(cfg.noise_rate * step / 1000.0)
        chunk.append((rng.integers(0, W, n_noise), rng.integers(0, H, n_noise),
                      t0 + rng.integers(0, step, n_noise), rng.integers(0, 2, n_noise),
                      np.full(n_noise, NOISE_ID), np.full(n_noise, np.nan),
                      np.full(n_noise, np.nan)))
        merged = [np.concatenate([c[i] for c in chunk]) for i in range(7)]
        order = np.argsort(merged[2], kind="stable")
        for i in range(7):
            cols[i].append(merged[i][order])
    x, y, t, p, obj, u, v = (np.concatenate(c) if c else np.zeros(0) for c in cols)
    stream = EventStream.from_arrays(x, y, t, p, width=W, height=H, source="synth")
    return stream, ground_truth(cfg), Correspondence(obj.astype(np.int64), u, v)


def ground_truth(cfg: SyntheticSceneConfig) -> AnnotationTrack:
    """Target outline bounding box at each interval's midpoint."""
    out = []
    for t0 in range(0, cfg.duration_us, cfg.interval_us):
        t1 = min(t0 + cfg.interval_us, cfg.duration_us)
        mid = (t0 + t1) / 2
        box = None
        if not cfg.target.is_hidden(mid):
            pix, _, _ = outline_pixels(cfg.target.vertices, *cfg.target.pose(mid))
            inside = ((pix[:, 0] >= 0) & (pix[:, 0] < cfg.width)
                      & (pix[:, 1] >= 0) & (pix[:, 1] < cfg.height))
            if inside.any():
                box = BoundingBox.around(pix[inside, 0], pix[inside, 1])
        out.append(AnnotationInterval(t0, t1, box))
    return AnnotationTrack(tuple(out))


def regular_polygon(n: int, radius: float, phase: float = 0.0) -> tuple[tuple[float, float], ...]:
    a = phase + 2 * math.pi * np.arange(n) / n
    return tuple((float(radius * math.cos(t)), float(radius * math.sin(t))) for t in a)


SHAPES = {
    "triangle": regular_polygon(3, 16, -math.pi / 2),
    "square": ((-12.0, -12.0), (12.0, -12.0), (12.0, 12.0), (-12.0, 12.0)),
    "hexagon": regular_polygon(6, 14),
    "lshape": ((-12.0, -14.0), (-2.0, -14.0), (-2.0, 4.0), (12.0, 4.0), (12.0, 14.0),
               (-12.0, 14.0)),
    "star": tuple((float(r * math.cos(a)), float(r * math.sin(a)))
                  for r, a in zip([16, 7] * 5, -math.pi / 2 + np.arange(10) * math.pi / 5)),
}


def rotate90(stream: EventStream, cx: int, cy: int, drop_outside: bool = False) -> EventStream:
    """Rotate every event by +90 degrees about pixel ``(cx, cy)`` (``(dx, dy) -> (-dy, dx)``).

    Events landing outside the sensor raise unless ``drop_outside`` is set.
    """
    x = cx - (stream.y.astype(np.int64) - cy)
    y = cy + (stream.x.astype(np.int64) - cx)
    t, p = stream.t, stream.p
    if drop_outside:
        keep = (x >= 0) & (x < stream.width) & (y >= 0) & (y < stream.height)
        x, y, t, p = x[keep], y[keep], t[keep], p[keep]
    return EventStream.from_arrays(x, y, t, p, width=stream.width,
                                   height=stream.height, source=stream.source)


SCENES = ("static", "translate", "exit-reenter")
DISTRACTOR_POSES = ((200.0, 150.0), (30.0, 30.0))


def noise_for(shape: ShapeTrack, edge_rate: float, fraction: float = 0.1) -> float:
    """Sensor-wide noise rate equal to ``fraction`` of the target's total edge-event rate."""
    pix, _, _ = outline_pixels(shape.vertices, *shape.pose(0))
    return fraction * edge_rate * len(pix)


def make_scene(name: str, shape: str = "triangle", duration_us: int = 60_000_000,
               edge_rate: float = 0.2, noise_fraction: float = 0.1,
               distractors: bool = True) -> SyntheticSceneConfig:
    """Named scenes on a 240x180 sensor.

    ``translate`` holds still for the first 300 ms, then sweeps back and forth
    across the sensor. ``exit-reenter`` vanishes at 60 % of the duration and
    reappears 20 % later at another place. Two static distractors (square and
    hexagon) supply background structure.
    """
    if name not in SCENES:
        raise ConfigError(f"unknown scene {name!r}; choose from {', '.join(SCENES)}")
    if shape not in SHAPES:
        raise ConfigError(f"unknown shape {shape!r}")
    d = duration_us
    if name == "static":
        track = ShapeTrack(SHAPES[shape], ((0, 80.0, 90.0),))
    elif name == "translate":
        pts = [(0, 60.0, 90.0), (300_000, 60.0, 90.0)]
        legs = max(1, (d - 300_000) // 5_000_000)
        for k in range(1, legs + 1):
            t = 300_000 + (d - 300_000) * k // legs
            pts.append((t, 170.0, 70.0) if k % 2 else (t, 60.0, 110.0))
        track = ShapeTrack(SHAPES[shape], tuple(pts))
    else:
        gone, back = int(0.6 * d), int(0.8 * d)
        track = ShapeTrack(SHAPES[shape],
                           ((0, 60.0, 90.0), (300_000, 60.0, 90.0), (gone, 100.0, 80.0),
                            (gone + 1, 150.0, 110.0), (d, 160.0, 100.0)),
                           hidden=((gone, back),))
    dis = ()
    if distractors:
        others = [s for s in ("square", "hexagon", "star") if s != shape][:2]
        dis = tuple(ShapeTrack(SHAPES[o], ((0, *p),)) for o, p in zip(others, DISTRACTOR_POSES))
    return SyntheticSceneConfig(track, duration_us=d, edge_rate=edge_rate,
                                noise_rate=noise_for(track, edge_rate, noise_fraction),
                                distractors=dis)
