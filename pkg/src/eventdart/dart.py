"""Log-polar event descriptor: grid geometry, interpolation table, FIFO engine.

Each event gets an ``n_r x n_w`` histogram of the recent events around it,
binned on a log-polar grid centred at the event. Past events are spread over
the four surrounding bin midpoints by bilinear interpolation in (radius,
angle) space, and the histogram is L1-normalized. Descriptors are flattened
ring-major: bin ``q * n_w + p`` is ring ``q``, wedge ``p``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import CenterEvent, ConfigError, OutOfRange
from .events import Event, EventStream

N_RINGS = 7
N_WEDGES = 12
R_MIN = 2.0
R_MAX = 10.0
FIFO_SIZE = 3000

TWO_PI = 2.0 * math.pi
# nudges exact wedge-boundary angles into the counter-clockwise wedge
_ANGLE_EPS = 1e-9


def ring_radii(n_r: int, r_min: float, r_max: float) -> np.ndarray:
    """Geometric ring radii with the first ring at ``r_min`` and the last at ``r_max``."""
    q = np.arange(n_r, dtype=np.float64)
    radii = r_min * np.exp(q * math.log(r_max / r_min) / (n_r - 1))
    radii[-1] = r_max
    return radii


def cart_to_polar(dx: float, dy: float) -> tuple[float, float]:
    """Offset to ``(r, theta)`` with theta in ``[0, 2*pi)``."""
    if dx == 0 and dy == 0:
        raise CenterEvent("zero offset has no angle")
    r = math.hypot(dx, dy)
    theta = math.atan2(dy, dx)
    if theta < 0:
        theta += TWO_PI
    if theta >= TWO_PI:
        theta = 0.0
    return r, theta


@dataclass(frozen=True, eq=False)
class LogPolarGrid:
    n_r: int
    n_w: int
    r_min: float
    r_max: float
    ring_radii: np.ndarray
    theta_step: float
    rho_mid: np.ndarray
    theta_mid: np.ndarray
    lut_dx: np.ndarray
    lut_dy: np.ndarray
    lut_bins: np.ndarray
    lut_weights: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.n_r * self.n_w

    @property
    def window(self) -> int:
        return int(math.floor(self.r_max + 1e-9))

    def weights(self, r: float, theta: float) -> list[tuple[int, float]]:
        return interp_weights(r, theta, self)

    def lut_entry(self, dx: int, dy: int) -> list[tuple[int, float]]:
        hit = np.nonzero((self.lut_dx == dx) & (self.lut_dy == dy))[0]
        if not len(hit):
            raise KeyError((dx, dy))
        i = hit[0]
        return [(int(b), float(w)) for b, w in zip(self.lut_bins[i], self.lut_weights[i]) if w > 0]


def _wedge_of(theta: float, step: float, n_w: int) -> int:
    return int(math.floor(theta / step + _ANGLE_EPS)) % n_w


def _interp(r: float, theta: float, n_r: int, n_w: int, rho_mid: np.ndarray,
            step: float) -> list[tuple[int, float]]:
    if r < rho_mid[0] or r > rho_mid[-1]:
        q = 0 if r < rho_mid[0] else n_r - 1
        return [(q * n_w + _wedge_of(theta, step, n_w), 1.0)]
    q = int(np.searchsorted(rho_mid, r, side="right")) - 1
    q = min(max(q, 0), n_r - 2)
    u = (r - rho_mid[q]) / (rho_mid[q + 1] - rho_mid[q])
    s = theta / step - 0.5
    p = math.floor(s)
    v = s - p
    p0 = p % n_w
    p1 = (p + 1) % n_w
    return [
        (q * n_w + p0, (1.0 - u) * (1.0 - v)),
        ((q + 1) * n_w + p0, u * (1.0 - v)),
        (q * n_w + p1, (1.0 - u) * v),
        ((q + 1) * n_w + p1, u * v),
    ]


def interp_weights(r: float, theta: float, grid: LogPolarGrid) -> list[tuple[int, float]]:
    """Distribute a point at polar ``(r, theta)`` over its neighbouring bins.

    Inside the span of the radial midpoints the four surrounding midpoints
    share the point bilinearly (wedges wrap around). Outside that span the
    single closest bin takes all of it.
    """
    if r > grid.r_max + 1e-9:
        raise OutOfRange(f"radius {r} beyond r_max={grid.r_max}")
    if r <= 0:
        raise CenterEvent("radius must be positive")
    return _interp(r, theta, grid.n_r, grid.n_w, grid.rho_mid, grid.theta_step)


def build_grid(n_r: int = N_RINGS, n_w: int = N_WEDGES, r_min: float = R_MIN,
               r_max: float = R_MAX) -> LogPolarGrid:
    if n_r < 2 or n_w < 4:
        raise ConfigError(f"grid needs n_r >= 2 and n_w >= 4, got {n_r}x{n_w}")
    if not (0 < r_min < r_max):
        raise ConfigError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
    radii = ring_radii(n_r, r_min, r_max)
    rho_mid = (np.concatenate(([0.0], radii[:-1])) + radii) / 2.0
    step = TWO_PI / n_w
    theta_mid = (np.arange(n_w) + 0.5) * step

    R = int(math.floor(r_max + 1e-9))
    dxs, dys, bins, weights = [], [], [], []
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            if dx == 0 and dy == 0:
                continue
            r, theta = cart_to_polar(dx, dy)
            if r > r_max + 1e-9:
                continue
            entry = _interp(r, theta, n_r, n_w, rho_mid, step)
            entry = entry + [(entry[0][0], 0.0)] * (4 - len(entry))
            dxs.append(dx)
            dys.append(dy)
            bins.append([b for b, _ in entry])
            weights.append([w for _, w in entry])
    grid = LogPolarGrid(
        n_r=n_r, n_w=n_w, r_min=float(r_min), r_max=float(r_max),
        ring_radii=radii, theta_step=step, rho_mid=rho_mid, theta_mid=theta_mid,
        lut_dx=np.array(dxs, np.int32), lut_dy=np.array(dys, np.int32),
        lut_bins=np.array(bins, np.int32), lut_weights=np.array(weights, np.float64),
    )
    for a in (grid.ring_radii, grid.rho_mid, grid.theta_mid, grid.lut_dx,
              grid.lut_dy, grid.lut_bins, grid.lut_weights):
        a.flags.writeable = False
    return grid


@dataclass(frozen=True, eq=False)
class DartDescriptor:
    values: np.ndarray
    center: Event
    n_w: int

    def circular_shift(self, f: int) -> "DartDescriptor":
        return DartDescriptor(circular_shift(self.values, f, self.n_w), self.center, self.n_w)


def circular_shift(values: np.ndarray, f: int, n_w: int) -> np.ndarray:
    """Rotate every ring's wedge vector by ``f`` positions (wedge p moves to p + f).

    Works on a single descriptor or a stack of them (last axis = bins).
    """
    if not (0 <= f < n_w):
        raise ConfigError(f"shift {f} outside [0, {n_w})")
    values = np.asarray(values)
    lead = values.shape[:-1]
    rings = values.reshape(lead + (-1, n_w))
    return np.roll(rings, f, axis=-1).reshape(values.shape)


# -- numba kernels ----------------------------------------------------------

@njit(cache=True)
def _push(fifo_x, fifo_y, ptr, count, x, y):
    cap = fifo_x.shape[0]
    head, size = ptr[0], ptr[1]
    if size == cap:
        ox, oy = fifo_x[head], fifo_y[head]
        count[oy, ox] -= 1
        fifo_x[head] = x
        fifo_y[head] = y
        ptr[0] = (head + 1) % cap
    else:
        tail = (head + size) % cap
        fifo_x[tail] = x
        fifo_y[tail] = y
        ptr[1] = size + 1
    count[y, x] += 1


@njit(cache=True)
def _accumulate(count, x, y, lut_dx, lut_dy, lut_bins, lut_w, out):
    h, w = count.shape
    for k in range(out.shape[0]):
        out[k] = 0.0
    for i in range(lut_dx.shape[0]):
        xx = x + lut_dx[i]
        yy = y + lut_dy[i]
        if xx < 0 or yy < 0 or xx >= w or yy >= h:
            continue
        c = count[yy, xx]
        if c == 0:
            continue
        for j in range(4):
            out[lut_bins[i, j]] += c * lut_w[i, j]
    total = 0.0
    for k in range(out.shape[0]):
        total += out[k]
    if total > 0.0:
        for k in range(out.shape[0]):
            out[k] /= total


@njit(cache=True)
def _describe(xs, ys, fifo_x, fifo_y, ptr, count, lut_dx, lut_dy, lut_bins, lut_w, out):
    for i in range(xs.shape[0]):
        _push(fifo_x, fifo_y, ptr, count, xs[i], ys[i])
        _accumulate(count, xs[i], ys[i], lut_dx, lut_dy, lut_bins, lut_w, out[i])


@njit(cache=True)
def _push_many(xs, ys, fifo_x, fifo_y, ptr, count):
    for i in range(xs.shape[0]):
        _push(fifo_x, fifo_y, ptr, count, xs[i], ys[i])


class DartEngine:
    """FIFO of recent event locations plus the per-pixel count matrix.

    The engine is stateful and strictly sequential: push every event in
    stream order, and extract a descriptor right after pushing its event.
    """

    def __init__(self, grid: LogPolarGrid, width: int, height: int,
                 capacity: int = FIFO_SIZE):
        if capacity < 1:
            raise ConfigError("FIFO capacity must be positive")
        self.grid = grid
        self.width = width
        self.height = height
        self.capacity = capacity
        self.fifo_x = np.zeros(capacity, np.int32)
        self.fifo_y = np.zeros(capacity, np.int32)
        self._ptr = np.zeros(2, np.int64)  # head, size
        self.count = np.zeros((height, width), np.int32)

    def __len__(self) -> int:
        return int(self._ptr[1])

    def fifo(self) -> list[tuple[int, int]]:
        head, size = int(self._ptr[0]), int(self._ptr[1])
        idx = (head + np.arange(size)) % self.capacity
        return list(zip(self.fifo_x[idx].tolist(), self.fifo_y[idx].tolist()))

    def reset(self) -> None:
        self._ptr[:] = 0
        self.count[:] = 0

    def push(self, e: Event) -> None:
        _push(self.fifo_x, self.fifo_y, self._ptr, self.count, np.int32(e.x), np.int32(e.y))

    def push_many(self, stream: EventStream) -> None:
        _push_many(stream.x, stream.y, self.fifo_x, self.fifo_y, self._ptr, self.count)

    def extract(self, e: Event) -> DartDescriptor:
        g = self.grid
        out = np.zeros(g.n_bins, np.float64)
        _accumulate(self.count, e.x, e.y, g.lut_dx, g.lut_dy, g.lut_bins, g.lut_weights, out)
        return DartDescriptor(out, e, g.n_w)

    def describe(self, stream: EventStream) -> np.ndarray:
        """Push each event of ``stream`` and return its descriptor, shape ``(N, n_r*n_w)``."""
        g = self.grid
        out = np.zeros((len(stream), g.n_bins), np.float64)
        _describe(stream.x, stream.y, self.fifo_x, self.fifo_y, self._ptr, self.count,
                  g.lut_dx, g.lut_dy, g.lut_bins, g.lut_weights, out)
        return out


def engine_push(engine: DartEngine, e: Event) -> None:
    engine.push(e)


def extract(engine: DartEngine, e: Event) -> DartDescriptor:
    return engine.extract(e)


def describe_stream(stream: EventStream, grid: LogPolarGrid | None = None,
                    capacity: int = FIFO_SIZE) -> np.ndarray:
    """Descriptors for every event of a stream, from a fresh engine."""
    grid = grid or build_grid()
    return DartEngine(grid, stream.width, stream.height, capacity).describe(stream)


# -- descriptor dumps -------------------------------------------------------

DESCRIPTOR_MAGIC = b"DRTD"
_HEADER = struct.Struct("<4sIII")


def write_descriptors(path, descriptors: np.ndarray, n_r: int, n_w: int) -> None:
    descriptors = np.asarray(descriptors, dtype="<f4").reshape(-1, n_r * n_w)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DESCRIPTOR_MAGIC, n_r, n_w, len(descriptors)))
        fh.write(descriptors.tobytes())


def read_descriptors(path) -> tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    magic, n_r, n_w, count = _HEADER.unpack_from(data)
    if magic != DESCRIPTOR_MAGIC:
        raise ValueError(f"{path}: not a descriptor dump")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != count * n_r * n_w:
        raise ValueError(f"{path}: expected {count} rows, file is truncated")
    return body.reshape(count, n_r * n_w).astype(np.float64), n_r, n_w


def descriptors_to_csv(stream: EventStream, descriptors: np.ndarray) -> str:
    buf = io.StringIO()
    d = descriptors.shape[1]
    buf.write("x,y,t," + ",".join(f"b{k}" for k in range(d)) + "\n")
    for i in range(len(stream)):
        vals = ",".join(f"{v:.6g}" for v in descriptors[i])
        buf.write(f"{stream.x[i]},{stream.y[i]},{stream.t[i]},{vals}\n")
    return buf.getvalue()
