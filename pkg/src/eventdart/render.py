"""Binary PPM overlays: events coloured by polarity, boxes and match lines on top."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .events import BoundingBox, EventStream

log = logging.getLogger(__name__)

BACKGROUND = (255, 255, 255)
ON_COLOR = (255, 0, 0)  # p = 1
OFF_COLOR = (0, 255, 255)  # p = 0
BOX_COLOR = (0, 160, 0)
LINE_COLOR = (0, 0, 255)


def rasterize(stream: EventStream, t0: int, t1: int) -> np.ndarray:
    """(H, W, 3) uint8 image of the events in ``[t0, t1)``; later events paint over earlier."""
    img = np.empty((stream.height, stream.width, 3), np.uint8)
    img[:] = BACKGROUND
    win = stream.slice(t0, t1)
    if len(win) == 0:
        log.warning("no events in [%d, %d); writing a blank frame", t0, t1)
        return img
    colors = np.where(win.p[:, None] == 1, np.array(ON_COLOR, np.uint8),
                      np.array(OFF_COLOR, np.uint8))
    # fancy assignment keeps the last write for repeated pixels
    img[win.y, win.x] = colors
    return img


def draw_box(img: np.ndarray, box: BoundingBox, color=BOX_COLOR) -> None:
    h, w = img.shape[:2]
    b = box.clipped(w, h)
    img[b.y_min, b.x_min:b.x_max + 1] = color
    img[b.y_max, b.x_min:b.x_max + 1] = color
    img[b.y_min:b.y_max + 1, b.x_min] = color
    img[b.y_min:b.y_max + 1, b.x_max] = color


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Bresenham rasterization including both end points."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_line(img: np.ndarray, p: tuple[int, int], q: tuple[int, int], color=LINE_COLOR) -> None:
    h, w = img.shape[:2]
    for x, y in line_pixels(int(p[0]), int(p[1]), int(q[0]), int(q[1])):
        if 0 <= x < w and 0 <= y < h:
            img[y, x] = color


def encode_ppm(img: np.ndarray) -> bytes:
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, np.uint8).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], np.uint8).reshape(h, w, 3)


def render_overlay(stream: EventStream, t0: int, t1: int, out_path,
                   boxes: Optional[Iterable[BoundingBox]] = None,
                   matches: Optional[Sequence[tuple[tuple[int, int], tuple[int, int]]]] = None
                   ) -> np.ndarray:
    img = rasterize(stream, t0, t1)
    for b in boxes or ():
        draw_box(img, b)
    for p, q in matches or ():
        draw_line(img, p, q)
    Path(out_path).write_bytes(encode_ppm(img))
    return img
