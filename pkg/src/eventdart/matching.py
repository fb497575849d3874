"""Descriptor correspondence between two time slices with a nearest-neighbour ratio test."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dart import FIFO_SIZE, DartEngine, LogPolarGrid, build_grid
from .encoding import N_TREES, Codebook, KdForest, build_forest
from .errors import InsufficientCandidates, ShapeError
from .events import EventStream
from .filtering import THETA_NOISE_US, THETA_REF_US, cascade

RATIO = 0.6


@dataclass(frozen=True, eq=False)
class FeatureSet:
    descriptors: np.ndarray  # (N, d)
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        n = len(self.descriptors)
        if not (len(self.x) == len(self.y) == len(self.t) == n):
            raise ShapeError("descriptor and coordinate counts differ")

    def __len__(self) -> int:
        return len(self.descriptors)


@dataclass(frozen=True)
class MatchPair:
    index_a: int
    index_b: int
    distance_first: float
    distance_second: float

    @property
    def ratio(self) -> float:
        return self.distance_first / self.distance_second


def slice_features(stream: EventStream, t0: int, t1: int, grid: Optional[LogPolarGrid] = None,
                   fifo_size: int = FIFO_SIZE, theta_noise: float = THETA_NOISE_US,
                   theta_ref: float = THETA_REF_US, every: int = 1) -> FeatureSet:
    """Descriptors of every ``every``-th filtered event with ``t0 <= t < t1``.

    The engine sees the whole filtered stream so early events of the slice
    still have their full temporal context.
    """
    if every < 1:
        raise ValueError("subsampling step must be >= 1")
    grid = grid or build_grid()
    filtered = cascade(stream, theta_noise, theta_ref)
    stop = int(np.searchsorted(filtered.t, t1, side="left"))
    lo = int(np.searchsorted(filtered.t, t0, side="left"))
    desc = DartEngine(grid, stream.width, stream.height, fifo_size).describe(
        filtered.select(slice(0, stop)))
    idx = np.arange(lo, stop)[::every]
    return FeatureSet(desc[idx], filtered.x[idx], filtered.y[idx], filtered.t[idx])


def two_nearest(A: np.ndarray, B: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Indices (N, 2) and Euclidean distances (N, 2) of each row's two closest rows of ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    bb = np.einsum("ij,ij->i", B, B)
    idx = np.empty((len(A), 2), np.int64)
    dist = np.empty((len(A), 2))
    for s in range(0, len(A), chunk):
        a = A[s:s + chunk]
        d2 = np.einsum("ij,ij->i", a, a)[:, None] - 2.0 * a @ B.T + bb[None, :]
        # shortlist by the expanded form, then rank the shortlist on exact distances
        c = min(4, len(B))
        top = np.argpartition(d2, c - 1, axis=1)[:, :c]
        diff = a[:, None, :] - B[top]
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.lexsort((top, exact), axis=1)[:, :2]
        top = np.take_along_axis(top, order, 1)
        exact = np.take_along_axis(exact, order, 1)
        idx[s:s + chunk] = top
        dist[s:s + chunk] = exact
    return idx, dist


def build_match_forest(B: FeatureSet | np.ndarray, n_trees: int = N_TREES, seed: int = 0,
                       max_checks: int = 64) -> KdForest:
    """Randomized kd-forest over the candidate descriptors of slice B."""
    DB = B.descriptors if isinstance(B, FeatureSet) else B
    return build_forest(Codebook(DB), n_trees, seed, max_checks)


def _forest_two_nearest(A: np.ndarray, B: np.ndarray, forest: KdForest
                        ) -> tuple[np.ndarray, np.ndarray]:
    if len(forest.centroids) != len(B):
        raise ShapeError("forest was not built over the candidate set")
    cand = forest.query_k(A, 2)
    diff = A[:, None, :] - B[np.maximum(cand, 0)]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    # a search that checked a single candidate has no second distance to compare with
    dist[cand < 0] = 0.0
    return cand, dist


def match_sets(A: FeatureSet | np.ndarray, B: FeatureSet | np.ndarray, ratio: float = RATIO,
               forest: Optional[KdForest] = None, mutual: bool = False) -> list[MatchPair]:
    """Keep ``a -> b`` when ``d1 / d2 < ratio``; a zero second distance is ambiguous."""
    DA = A.descriptors if isinstance(A, FeatureSet) else np.asarray(A, dtype=np.float64)
    DB = B.descriptors if isinstance(B, FeatureSet) else np.asarray(B, dtype=np.float64)
    if len(DB) < 2:
        raise InsufficientCandidates(f"need at least two candidates, got {len(DB)}")
    if not 0 < ratio <= 1:
        raise ValueError("ratio threshold must be in (0, 1]")
    if len(DA) == 0:
        return []
    if DA.shape[1] != DB.shape[1]:
        raise ShapeError("descriptor dimensions differ")
    if forest is None:
        idx, dist = two_nearest(DA, DB)
    else:
        idx, dist = _forest_two_nearest(np.asarray(DA, dtype=np.float64), DB, forest)
    d1, d2 = dist[:, 0], dist[:, 1]
    keep = (d2 > 0) & (d1 < ratio * d2)
    if mutual:
        back, _ = two_nearest(DB, DA)
        keep &= back[idx[:, 0], 0] == np.arange(len(DA))
    return [MatchPair(int(i), int(idx[i, 0]), float(d1[i]), float(d2[i]))
            for i in np.nonzero(keep)[0]]


def format_match_csv(A: FeatureSet, B: FeatureSet, pairs: Sequence[MatchPair]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["xa", "ya", "ta", "xb", "yb", "tb", "ratio"])
    for m in pairs:
        i, j = m.index_a, m.index_b
        w.writerow([int(A.x[i]), int(A.y[i]), int(A.t[i]), int(B.x[j]), int(B.y[j]), int(B.t[j]),
                    repr(m.ratio)])
    return buf.getvalue()
