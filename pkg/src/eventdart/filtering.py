"""Refractory and nearest-neighbour noise filters.

The cascade runs the refractory filter first; the noise filter then looks for
support among refractory survivors only.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import OrderViolation
from .events import Event, EventStream

THETA_REF_US = 1000
THETA_NOISE_US = 5000

# "never fired" marker; far enough below zero that t - NEVER cannot overflow
NEVER = np.int64(-(2 ** 62))


class FilterState:
    """Per-pixel timestamp memory for one filter stage."""

    def __init__(self, width: int, height: int, theta_noise: float = THETA_NOISE_US,
                 theta_ref: float = THETA_REF_US):
        self.width = width
        self.height = height
        self.theta_noise = float(theta_noise)
        self.theta_ref = float(theta_ref)
        self.last_t = np.full((height, width), NEVER, dtype=np.int64)
        self.clock = NEVER

    def _advance(self, t: int) -> None:
        if t < self.clock:
            raise OrderViolation(f"timestamp {t} precedes {self.clock}")
        self.clock = t


def refractory_pass(e: Event, state: FilterState) -> bool:
    """Keep ``e`` unless its pixel passed an event within ``theta_ref`` (inclusive)."""
    state._advance(e.t)
    last = state.last_t[e.y, e.x]
    if last == NEVER or e.t - last > state.theta_ref:
        state.last_t[e.y, e.x] = e.t
        return True
    return False


def noise_pass(e: Event, state: FilterState) -> bool:
    """Keep ``e`` if one of its 8 neighbours fired less than ``theta_noise`` ago.

    Every presented event is recorded, kept or not.
    """
    state._advance(e.t)
    y0, y1 = max(e.y - 1, 0), min(e.y + 2, state.height)
    x0, x1 = max(e.x - 1, 0), min(e.x + 2, state.width)
    keep = False
    for yy in range(y0, y1):
        for xx in range(x0, x1):
            last = state.last_t[yy, xx]
            if (xx != e.x or yy != e.y) and last != NEVER and e.t - last < state.theta_noise:
                keep = True
    state.last_t[e.y, e.x] = e.t
    return keep


@njit(cache=True)
def _refractory_mask(x, y, t, last_t, theta_ref):
    n = x.shape[0]
    keep = np.zeros(n, np.bool_)
    for i in range(n):
        last = last_t[y[i], x[i]]
        if last == NEVER or t[i] - last > theta_ref:
            last_t[y[i], x[i]] = t[i]
            keep[i] = True
    return keep


@njit(cache=True)
def _noise_mask(x, y, t, last_t, theta_noise):
    n = x.shape[0]
    h, w = last_t.shape
    keep = np.zeros(n, np.bool_)
    for i in range(n):
        xi, yi, ti = x[i], y[i], t[i]
        for yy in range(max(yi - 1, 0), min(yi + 2, h)):
            for xx in range(max(xi - 1, 0), min(xi + 2, w)):
                last = last_t[yy, xx]
                if (xx != xi or yy != yi) and last != NEVER and ti - last < theta_noise:
                    keep[i] = True
        last_t[yi, xi] = ti
    return keep


def refractory_filter(stream: EventStream, theta_ref: float = THETA_REF_US) -> EventStream:
    last = np.full((stream.height, stream.width), NEVER, dtype=np.int64)
    return stream.select(_refractory_mask(stream.x, stream.y, stream.t, last, float(theta_ref)))


def noise_filter(stream: EventStream, theta_noise: float = THETA_NOISE_US) -> EventStream:
    last = np.full((stream.height, stream.width), NEVER, dtype=np.int64)
    return stream.select(_noise_mask(stream.x, stream.y, stream.t, last, float(theta_noise)))


def cascade(stream: EventStream, theta_noise: float = THETA_NOISE_US,
            theta_ref: float = THETA_REF_US) -> EventStream:
    """Refractory filter followed by the noise filter."""
    return noise_filter(refractory_filter(stream, theta_ref), theta_noise)
