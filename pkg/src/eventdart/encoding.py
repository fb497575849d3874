"""Codebooks, approximate quantization, bag-of-words pooling and the chi2 map."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import ConfigError, DomainError

K_CLASSIFY = 3000
K_TRACK = 300
N_TREES = 4
MAX_CHECKS = 15
TOP_VARIANT_DIMS = 5
SPM_LEVELS = (1, 2, 3)
KERNEL_ORDER = 1
KERNEL_PERIOD = 0.65


# -- exact nearest centroid ------------------------------------------------

def nearest_centroids(X: np.ndarray, centroids: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Exact Euclidean argmin per row of ``X``; ties go to the lowest index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = np.asarray(centroids, dtype=np.float64)
    c2 = np.einsum("ij,ij->i", C, C)
    out = np.empty(len(X), dtype=np.int64)
    for lo in range(0, len(X), chunk):
        xb = X[lo:lo + chunk]
        d2 = c2[None, :] - 2.0 * (xb @ C.T)
        best = d2.min(axis=1)
        # the expanded form is inexact; settle near-ties with direct distances
        tol = 1e-9 * (1.0 + np.abs(best)) + 1e-12 * np.einsum("ij,ij->i", xb, xb)
        near = d2 <= (best + tol)[:, None]
        idx = np.argmax(near, axis=1)
        for r in np.nonzero(near.sum(axis=1) > 1)[0]:
            cand = np.nonzero(near[r])[0]
            dd = ((C[cand] - xb[r]) ** 2).sum(axis=1)
            idx[r] = cand[np.argmin(dd)]
        out[lo:lo + chunk] = idx
    return out


def _min_sq_dist(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return ((X - C[labels]) ** 2).sum(axis=1)


# -- k-means ----------------------------------------------------------------

@dataclass(eq=False)
class Codebook:
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or len(self.centroids) < 2:
            raise ConfigError("a codebook needs at least two centroids")
        if not np.all(np.isfinite(self.centroids)):
            raise ConfigError("codebook centroids must be finite")

    @property
    def K(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def quantize(self, X: np.ndarray, forest: "KdForest | None" = None) -> np.ndarray:
        X = np.atleast_2d(X)
        if forest is None:
            return nearest_centroids(X, self.centroids)
        return forest.query(X)


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            i = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            i = int(rng.choice(rest))
        chosen.append(i)
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans_train(X: np.ndarray, K: int, max_iters: int = 100, seed: int = 0) -> Codebook:
    """Lloyd iterations from k-means++ seeds until the assignment stops changing.

    Empty clusters are re-seeded at the points farthest from their centroid.
    Centroids are rounded to float32 at the end so that a saved codebook
    reloads bit-identically.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if len(X) < K:
        raise ConfigError(f"need at least K={K} descriptors, got {len(X)}")
    if K < 2:
        raise ConfigError("K must be at least 2")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, K, rng)
    labels = nearest_centroids(X, C)
    history = [float(_min_sq_dist(X, C, labels).sum())]
    for _ in range(max_iters):
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=K)
        filled = counts > 0
        C[filled] = sums[filled] / counts[filled, None]
        empty = np.nonzero(~filled)[0]
        if len(empty):
            far = np.argsort(-_min_sq_dist(X, C, labels), kind="stable")[:len(empty)]
            C[empty] = X[far]
        new_labels = nearest_centroids(X, C)
        history.append(float(_min_sq_dist(X, C, new_labels).sum()))
        if np.array_equal(new_labels, labels) and not len(empty):
            labels = new_labels
            break
        labels = new_labels
    C = C.astype(np.float32).astype(np.float64)
    return Codebook(C, history)


# -- randomized kd-forest ----------------------------------------------------

@dataclass(eq=False)
class KdForest:
    """Randomized kd-trees over codebook centroids, searched best-bin-first.

    Node arrays from all trees are concatenated; ``roots`` holds each tree's
    root node. Leaves (``left == -1``) own ``leaf_count`` entries of
    ``leaf_items`` starting at ``leaf_start``.
    """

    centroids: np.ndarray
    n_trees: int
    seed: int
    max_checks: int
    roots: np.ndarray
    split_dim: np.ndarray
    split_val: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_items: np.ndarray

    def query(self, X: np.ndarray, max_checks: Optional[int] = None) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        checks = self.max_checks if max_checks is None else max_checks
        return _bbf_many(X, self.centroids, self.roots, self.split_dim, self.split_val,
                         self.left, self.right, self.leaf_start, self.leaf_count,
                         self.leaf_items, int(checks))

    def query_k(self, X: np.ndarray, k: int = 2, max_checks: Optional[int] = None) -> np.ndarray:
        """Best ``k`` candidates (closest first, -1 when fewer were checked)."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        checks = self.max_checks if max_checks is None else max_checks
        return _bbf_many_k(X, self.centroids, self.roots, self.split_dim, self.split_val,
                           self.left, self.right, self.leaf_start, self.leaf_count,
                           self.leaf_items, int(checks), int(k))

    def leaves(self, tree: int) -> list[list[int]]:
        """Centroid indices held by each leaf of one tree (for inspection/tests)."""
        out, stack = [], [int(self.roots[tree])]
        while stack:
            n = stack.pop()
            if self.left[n] < 0:
                s = self.leaf_start[n]
                out.append(self.leaf_items[s:s + self.leaf_count[n]].tolist())
            else:
                stack += [int(self.right[n]), int(self.left[n])]
        return out


def build_forest(cb: Codebook, n_trees: int = N_TREES, seed: int = 0,
                 max_checks: int = MAX_CHECKS, leaf_size: int = 1) -> KdForest:
    """Each split picks uniformly among the five highest-variance dimensions
    of the node's points and cuts at their median."""
    C = cb.centroids
    rng = np.random.default_rng(seed)
    split_dim, split_val, left, right, leaf_start, leaf_count = [], [], [], [], [], []
    items: list[int] = []

    def new_node() -> int:
        for lst, v in ((split_dim, -1), (split_val, 0.0), (left, -1), (right, -1),
                       (leaf_start, 0), (leaf_count, 0)):
            lst.append(v)
        return len(left) - 1

    def make_leaf(node: int, idx: np.ndarray) -> None:
        leaf_start[node] = len(items)
        leaf_count[node] = len(idx)
        items.extend(int(i) for i in idx)

    def grow(idx: np.ndarray) -> int:
        node = new_node()
        work = [(node, idx)]
        while work:
            nd, ix = work.pop()
            if len(ix) <= leaf_size:
                make_leaf(nd, ix)
                continue
            var = C[ix].var(axis=0)
            order = np.argsort(-var, kind="stable")
            order = order[var[order] > 0][:TOP_VARIANT_DIMS]
            if not len(order):
                make_leaf(nd, ix)
                continue
            dim = int(order[rng.integers(len(order))])
            vals = C[ix, dim]
            srt = np.argsort(vals, kind="stable")
            half = len(ix) // 2
            split_dim[nd] = dim
            split_val[nd] = 0.5 * (vals[srt[half - 1]] + vals[srt[half]])
            lnode, rnode = new_node(), new_node()
            left[nd], right[nd] = lnode, rnode
            work.append((rnode, ix[srt[half:]]))
            work.append((lnode, ix[srt[:half]]))
        return node

    roots = [grow(np.arange(cb.K)) for _ in range(n_trees)]
    return KdForest(
        centroids=C, n_trees=n_trees, seed=seed, max_checks=max_checks,
        roots=np.array(roots, np.int32), split_dim=np.array(split_dim, np.int32),
        split_val=np.array(split_val, np.float64), left=np.array(left, np.int32),
        right=np.array(right, np.int32), leaf_start=np.array(leaf_start, np.int32),
        leaf_count=np.array(leaf_count, np.int32), leaf_items=np.array(items, np.int32),
    )


@njit(cache=True)
def _heap_push(hp, hn, size, p, n):
    i = size
    hp[i] = p
    hn[i] = n
    while i > 0:
        parent = (i - 1) // 2
        if hp[parent] <= hp[i]:
            break
        hp[parent], hp[i] = hp[i], hp[parent]
        hn[parent], hn[i] = hn[i], hn[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(hp, hn, size):
    p, n = hp[0], hn[0]
    size -= 1
    hp[0] = hp[size]
    hn[0] = hn[size]
    i = 0
    while True:
        lc = 2 * i + 1
        if lc >= size:
            break
        c = lc
        if lc + 1 < size and hp[lc + 1] < hp[lc]:
            c = lc + 1
        if hp[i] <= hp[c]:
            break
        hp[c], hp[i] = hp[i], hp[c]
        hn[c], hn[i] = hn[i], hn[c]
        i = c
    return p, n, size


@njit(cache=True)
def _bbf_one(q, C, roots, sdim, sval, left, right, lstart, lcount, items, max_checks,
             hp, hn, seen, stamp):
    best = -1
    best_d = np.inf
    checks = 0
    size = 0
    for t in range(roots.shape[0]):
        size = _heap_push(hp, hn, size, 0.0, roots[t])
    while size > 0 and checks < max_checks:
        prio, node, size = _heap_pop(hp, hn, size)
        # descend to a leaf, queueing the far side of every split
        while left[node] >= 0:
            diff = q[sdim[node]] - sval[node]
            if diff < 0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            size = _heap_push(hp, hn, size, prio + diff * diff, far)
            node = near
        for k in range(lstart[node], lstart[node] + lcount[node]):
            c = items[k]
            if seen[c] == stamp:
                continue
            seen[c] = stamp
            d = 0.0
            for j in range(q.shape[0]):
                diff = q[j] - C[c, j]
                d += diff * diff
            checks += 1
            if d < best_d or (d == best_d and c < best):
                best_d = d
                best = c
            if checks >= max_checks:
                break
    return best


@njit(cache=True)
def _bbf_many(X, C, roots, sdim, sval, left, right, lstart, lcount, items, max_checks):
    n_nodes = left.shape[0]
    hp = np.empty(n_nodes + roots.shape[0], np.float64)
    hn = np.empty(n_nodes + roots.shape[0], np.int32)
    seen = np.full(C.shape[0], -1, np.int64)
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        out[i] = _bbf_one(X[i], C, roots, sdim, sval, left, right, lstart, lcount, items,
                          max_checks, hp, hn, seen, i)
    return out


@njit(cache=True)
def _bbf_k(q, C, roots, sdim, sval, left, right, lstart, lcount, items, max_checks,
           hp, hn, seen, stamp, best, best_d):
    k = best.shape[0]
    best[:] = -1
    best_d[:] = np.inf
    checks = 0
    size = 0
    for t in range(roots.shape[0]):
        size = _heap_push(hp, hn, size, 0.0, roots[t])
    while size > 0 and checks < max_checks:
        prio, node, size = _heap_pop(hp, hn, size)
        while left[node] >= 0:
            diff = q[sdim[node]] - sval[node]
            if diff < 0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            size = _heap_push(hp, hn, size, prio + diff * diff, far)
            node = near
        for m in range(lstart[node], lstart[node] + lcount[node]):
            c = items[m]
            if seen[c] == stamp:
                continue
            seen[c] = stamp
            d = 0.0
            for j in range(q.shape[0]):
                diff = q[j] - C[c, j]
                d += diff * diff
            checks += 1
            # insertion into the sorted best list; equal distances keep the lower index first
            pos = k
            while pos > 0 and (d < best_d[pos - 1] or (d == best_d[pos - 1] and c < best[pos - 1])):
                pos -= 1
            if pos < k:
                for r in range(k - 1, pos, -1):
                    best[r] = best[r - 1]
                    best_d[r] = best_d[r - 1]
                best[pos] = c
                best_d[pos] = d
            if checks >= max_checks:
                break


@njit(cache=True)
def _bbf_many_k(X, C, roots, sdim, sval, left, right, lstart, lcount, items, max_checks, k):
    n_nodes = left.shape[0]
    hp = np.empty(n_nodes + roots.shape[0], np.float64)
    hn = np.empty(n_nodes + roots.shape[0], np.int32)
    seen = np.full(C.shape[0], -1, np.int64)
    out = np.empty((X.shape[0], k), np.int64)
    best_d = np.empty(k, np.float64)
    for i in range(X.shape[0]):
        _bbf_k(X[i], C, roots, sdim, sval, left, right, lstart, lcount, items, max_checks,
               hp, hn, seen, i, out[i], best_d)
    return out


def quantize(x: np.ndarray, cb: Codebook, forest: Optional[KdForest] = None):
    """Codeword index of one descriptor, or an index array for a stack of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cb.dim:
        raise ValueError(f"descriptor dimension {x.shape[-1]} != codebook dimension {cb.dim}")
    idx = cb.quantize(x, forest)
    return int(idx[0]) if x.ndim == 1 else idx


# -- pooling ----------------------------------------------------------------

def bow_pool(indices: Sequence[int], K: int) -> np.ndarray:
    """Codeword frequencies ``count_k / S``; all zeros for empty input."""
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        return np.zeros(K)
    return np.bincount(idx, minlength=K).astype(np.float64) / len(idx)


def spm_cells(levels: Sequence[int] = SPM_LEVELS) -> int:
    return sum(g * g for g in levels)


def spm_pool(xs, ys, words, width: int, height: int, K: int,
             levels: Sequence[int] = SPM_LEVELS) -> np.ndarray:
    """Spatial-pyramid BoW: per-cell L1 histograms, concatenated, then L1 overall.

    Cells are ordered level by level, row-major within a level.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    words = np.asarray(words, dtype=np.int64)
    blocks = []
    for g in levels:
        cell = (ys * g // height) * g + (xs * g // width)
        h = np.bincount(cell * K + words, minlength=g * g * K).astype(np.float64)
        h = h.reshape(g * g, K)
        tot = h.sum(axis=1, keepdims=True)
        np.divide(h, tot, out=h, where=tot > 0)
        blocks.append(h.ravel())
    v = np.concatenate(blocks)
    s = v.sum()
    return v / s if s > 0 else v


# -- homogeneous kernel map --------------------------------------------------

@dataclass(frozen=True)
class KernelMapConfig:
    order: int = KERNEL_ORDER
    period: float = KERNEL_PERIOD

    def __post_init__(self):
        if self.order < 1 or self.period <= 0:
            raise ConfigError("kernel map needs order >= 1 and period > 0")

    def out_dim(self, d: int) -> int:
        return d * (2 * self.order + 1)


def chi2_spectrum(lam):
    """Spectrum of the chi2 kernel, sech(pi * lambda)."""
    return 1.0 / np.cosh(np.pi * np.asarray(lam, dtype=np.float64))


def kernel_map(x: np.ndarray, cfg: KernelMapConfig = KernelMapConfig()) -> np.ndarray:
    """Finite feature map whose inner products approximate the chi2 kernel.

    Each component ``c`` expands to ``2*order + 1`` values, kept adjacent; a
    zero component maps to zeros. Accepts a vector or a stack of vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise DomainError("kernel map is defined for non-negative inputs only")
    L, m = cfg.period, cfg.order
    pos = x > 0
    logx = np.log(np.where(pos, x, 1.0))
    out = np.empty(x.shape + (2 * m + 1,))
    out[..., 0] = np.sqrt(x * L * chi2_spectrum(0.0))
    for j in range(1, m + 1):
        amp = np.sqrt(2.0 * x * L * chi2_spectrum(j * L))
        out[..., 2 * j - 1] = amp * np.cos(j * L * logx)
        out[..., 2 * j] = amp * np.sin(j * L * logx)
    out[~pos] = 0.0
    return out.reshape(x.shape[:-1] + (-1,))


def chi2_kernel(x: np.ndarray, y: np.ndarray) -> float:
    """Additive chi2 kernel ``sum 2 x_i y_i / (x_i + y_i)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = x + y
    return float(np.sum(np.divide(2.0 * x * y, s, out=np.zeros_like(s), where=s > 0)))


# -- files ------------------------------------------------------------------

CODEBOOK_MAGIC = b"DCBK"
_CB_HEADER = struct.Struct("<4sII")
_FOREST_HEADER = struct.Struct("<4sIqI")


def write_codebook(path, cb: Codebook, forest: Optional[KdForest] = None) -> None:
    """Centroids as float32; with a forest, its parameters go in a ``.forest`` sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CB_HEADER.pack(CODEBOOK_MAGIC, cb.K, cb.dim))
        fh.write(cb.centroids.astype("<f4").tobytes())
    if forest is not None:
        Path(str(path) + ".forest").write_bytes(
            _FOREST_HEADER.pack(b"DKDF", forest.n_trees, forest.seed, forest.max_checks))


def read_codebook(path) -> tuple[Codebook, Optional[KdForest]]:
    path = Path(path)
    data = path.read_bytes()
    magic, K, d = _CB_HEADER.unpack_from(data)
    if magic != CODEBOOK_MAGIC:
        raise ValueError(f"{path}: not a codebook file")
    C = np.frombuffer(data, dtype="<f4", offset=_CB_HEADER.size)
    if C.size != K * d:
        raise ValueError(f"{path}: truncated codebook")
    cb = Codebook(C.reshape(K, d).astype(np.float64))
    side = Path(str(path) + ".forest")
    forest = None
    if side.exists():
        magic, n_trees, seed, checks = _FOREST_HEADER.unpack(side.read_bytes())
        forest = build_forest(cb, n_trees=n_trees, seed=seed, max_checks=checks)
    return cb, forest
