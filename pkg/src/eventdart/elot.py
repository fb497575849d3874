"""Long-term object tracking: one-shot training, local tracker, global detector.

The tracker scores bag-of-words histograms gathered inside a padded box with
a binary SVM and moves the box to the extent of the events it saw. When its
scores stay below their running mean for too long it declares the object
lost, and the detector takes over: it votes object-pure codewords into a
sensor-sized matrix until one connected blob is small enough to hand back to
the tracker.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from .classify import SVM_C, SVM_EPOCHS, SvmModel, svm_score, svm_train, svm_update_online
from .dart import FIFO_SIZE, DartEngine, LogPolarGrid, build_grid, circular_shift
from .encoding import (K_TRACK, MAX_CHECKS, N_TREES, Codebook, KdForest, KernelMapConfig,
                       bow_pool, build_forest, kernel_map, kmeans_train, nearest_centroids)
from .errors import InsufficientInit, NoComponent
from .events import BoundingBox, EventStream
from .filtering import THETA_NOISE_US, THETA_REF_US, cascade

INIT_WINDOW_US = 300_000
MIN_INIT_DESCRIPTORS = 10
BOOTSTRAP_DRAW = 200
DETECTOR_PURITY = 0.95
DETECTOR_FRACTION = 0.25


@dataclass(frozen=True)
class TrackerConfig:
    rate: float = 0.05
    pad_x: int = 1
    pad_y: int = 1
    fail_threshold: int = 3
    # below-mean scores join the running mean, as in (B_1 + ... + B_{t-1}) / (t - 1)
    history_all: bool = True

    def __post_init__(self):
        if not (0 < self.rate <= 1) or self.pad_x < 1 or self.pad_y < 1 or self.fail_threshold < 1:
            raise ValueError(f"invalid tracker configuration {self}")


@dataclass(eq=False)
class DetectorModel:
    words: np.ndarray  # sorted codeword indices whose clusters are object-pure
    K: int
    tau: float = DETECTOR_PURITY

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.int64)
        self.mask = np.zeros(self.K, np.bool_)
        self.mask[self.words] = True


@dataclass(eq=False)
class OneShotModel:
    codebook: Codebook
    svm: SvmModel
    detector: DetectorModel
    forest: Optional[KdForest] = None
    purity: np.ndarray = field(default_factory=lambda: np.zeros(0))


# -- one-shot training --------------------------------------------------------

def cluster_purity(words: np.ndarray, is_object: np.ndarray, K: int) -> np.ndarray:
    """Fraction of object-class members in each cluster (0 for empty clusters)."""
    n_i = np.bincount(words, minlength=K).astype(np.float64)
    n_i1 = np.bincount(words[is_object], minlength=K).astype(np.float64)
    return np.divide(n_i1, n_i, out=np.zeros(K), where=n_i > 0)


def bootstrap_train(roi_desc: np.ndarray, bg_desc: np.ndarray, K: int = K_TRACK,
                    seed: int = 0, n_w: int = 12,
                    kernel: KernelMapConfig = KernelMapConfig(), tau: float = DETECTOR_PURITY,
                    draw: int = BOOTSTRAP_DRAW, C: float = SVM_C, epochs: int = SVM_EPOCHS,
                    kmeans_iters: int = 50, n_trees: int = N_TREES,
                    max_checks: int = MAX_CHECKS) -> OneShotModel:
    """Codebook, binary SVM and detector words from one labelled window.

    Every descriptor is circularly shifted by a random number of wedges, the
    codebook is learnt from both classes, and each class is resampled with
    replacement into as many BoW pseudo-samples as it has descriptors.
    """
    roi_desc = np.asarray(roi_desc, dtype=np.float64)
    bg_desc = np.asarray(bg_desc, dtype=np.float64)
    if len(roi_desc) < MIN_INIT_DESCRIPTORS or len(bg_desc) < MIN_INIT_DESCRIPTORS:
        raise InsufficientInit(f"need {MIN_INIT_DESCRIPTORS}+ descriptors per class, got "
                               f"{len(roi_desc)} object / {len(bg_desc)} background")
    rng = np.random.default_rng(seed)

    def shift_all(D: np.ndarray) -> np.ndarray:
        f = np.floor(rng.random(len(D)) * n_w).astype(np.int64)
        out = np.empty_like(D)
        for k in range(n_w):
            sel = f == k
            if sel.any():
                out[sel] = circular_shift(D[sel], k, n_w)
        return out

    roi_new = shift_all(roi_desc)
    bg_new = shift_all(bg_desc)
    X = np.concatenate([roi_new, bg_new])
    cb = kmeans_train(X, K, kmeans_iters, seed)
    words = nearest_centroids(X, cb.centroids)
    roi_words, bg_words = words[:len(roi_new)], words[len(roi_new):]

    samples, labels = [], []
    for cls_words, label in ((roi_words, 1.0), (bg_words, -1.0)):
        m = min(len(cls_words), draw)
        for _ in range(len(cls_words)):
            pick = cls_words[rng.integers(0, len(cls_words), size=m)]
            samples.append(bow_pool(pick, K))
            labels.append(label)
    psi = kernel_map(np.stack(samples), kernel)
    svm = svm_train(psi, np.asarray(labels), C, epochs, seed)

    is_obj = np.zeros(len(X), np.bool_)
    is_obj[:len(roi_new)] = True
    purity = cluster_purity(words, is_obj, K)
    detector = DetectorModel(np.nonzero(purity > tau)[0], K, tau)
    forest = build_forest(cb, n_trees, seed, max_checks)
    return OneShotModel(cb, svm, detector, forest, purity)


# -- tracker -------------------------------------------------------------------

@dataclass
class TrackDecision:
    kind: str  # accumulating | updated | failed_step | lost
    box: Optional[BoundingBox] = None
    score: Optional[float] = None


@dataclass(eq=False)
class TrackerState:
    box: BoundingBox
    width: int
    height: int
    K: int
    t: int = 1
    count: int = 0
    fail: int = 0
    lost: bool = False
    padded: Optional[BoundingBox] = None
    hist: np.ndarray = field(default=None)  # type: ignore[assignment]
    members: list = field(default_factory=lambda: [None, None, None, None])

    def __post_init__(self):
        if self.hist is None:
            self.hist = np.zeros(self.K, np.int64)

    def _clear_step(self) -> None:
        self.count = 0
        self.hist[:] = 0
        self.members = [None, None, None, None]
        self.padded = None


def track_step(state: TrackerState, model: SvmModel, x: int, y: int, word: int,
               cfg: TrackerConfig = TrackerConfig(),
               kernel: KernelMapConfig = KernelMapConfig()) -> TrackDecision:
    """Feed one event (with its codeword) to the tracker."""
    if state.lost:
        return TrackDecision("lost", state.box)
    if state.padded is None:
        state.padded = state.box.padded(cfg.pad_x, cfg.pad_y, state.width, state.height)
    pb = state.padded
    if pb.x_min <= x <= pb.x_max and pb.y_min <= y <= pb.y_max:
        state.hist[word] += 1
        state.count += 1
        m = state.members
        if m[0] is None:
            state.members = [x, y, x, y]
        else:
            m[0] = min(m[0], x)
            m[1] = min(m[1], y)
            m[2] = max(m[2], x)
            m[3] = max(m[3], y)
    if state.count <= cfg.rate * state.box.area:
        return TrackDecision("accumulating")

    psi = kernel_map(state.hist / state.count, kernel)
    score = svm_score(model, psi)
    mean = model.score_mean
    if state.t > 1 and mean is not None and score < mean:
        # failback: keep the previous box and gather fresh evidence
        state.fail += 1
        state.t += 1
        if cfg.history_all:
            model.record_score(score)
        state._clear_step()
        if state.fail > cfg.fail_threshold:
            state.lost = True
            return TrackDecision("lost", state.box, score)
        return TrackDecision("failed_step", state.box, score)

    svm_update_online(model, psi, +1)
    model.record_score(score)
    # the member extent already excludes padding rows/columns that saw no events
    state.box = BoundingBox(*state.members)
    state.fail = 0
    state.t += 1
    state._clear_step()
    return TrackDecision("updated", state.box, score)


# -- detector ------------------------------------------------------------------

@dataclass
class DetectDecision:
    kind: str  # accumulating | retry | empty | found
    box: Optional[BoundingBox] = None
    tau_c: int = 1


@dataclass(eq=False)
class DetectorState:
    width: int
    height: int
    tau_d: float = DETECTOR_FRACTION
    tau_c: int = 1
    count: int = 0
    M: np.ndarray = field(default=None)  # type: ignore[assignment]
    Mb: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.M is None:
            self.M = np.zeros((self.height, self.width), np.int32)
        if self.Mb is None:
            self.Mb = np.zeros((self.height, self.width), np.bool_)

    @property
    def trigger(self) -> float:
        return self.tau_d * self.height * self.width

    def reset(self) -> None:
        self.M[:] = 0
        self.Mb[:] = False
        self.count = 0


def dilate_cross(Mb: np.ndarray) -> np.ndarray:
    """Binary dilation with the 3x3 cross (the pixel and its four axis neighbours)."""
    Mb = np.asarray(Mb, dtype=np.bool_)
    out = Mb.copy()
    out[1:, :] |= Mb[:-1, :]
    out[:-1, :] |= Mb[1:, :]
    out[:, 1:] |= Mb[:, :-1]
    out[:, :-1] |= Mb[:, 1:]
    return out


@njit(cache=True)
def _largest_component(Mb):
    h, w = Mb.shape
    label = np.zeros((h, w), np.int32)
    queue = np.empty(h * w, np.int64)
    best_size = 0
    best = np.zeros(4, np.int64)
    cur = 0
    for y0 in range(h):
        for x0 in range(w):
            if not Mb[y0, x0] or label[y0, x0]:
                continue
            cur += 1
            label[y0, x0] = cur
            head, tail = 0, 1
            queue[0] = y0 * w + x0
            x_lo, y_lo, x_hi, y_hi = x0, y0, x0, y0
            while head < tail:
                k = queue[head]
                head += 1
                y, x = k // w, k % w
                x_lo = min(x_lo, x)
                x_hi = max(x_hi, x)
                y_lo = min(y_lo, y)
                y_hi = max(y_hi, y)
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and Mb[yy, xx] and not label[yy, xx]:
                        label[yy, xx] = cur
                        queue[tail] = yy * w + xx
                        tail += 1
            if tail > best_size:
                best_size = tail
                best[0], best[1], best[2], best[3] = x_lo, y_lo, x_hi, y_hi
    return best_size, best


def largest_component(Mb: np.ndarray) -> BoundingBox:
    """Bounding box of the biggest 4-connected blob; ties go to the row-major-first blob."""
    size, box = _largest_component(np.ascontiguousarray(Mb, dtype=np.bool_))
    if size == 0:
        raise NoComponent("binary matrix has no set pixels")
    return BoundingBox(*(int(v) for v in box))


def detect_step(dstate: DetectorState, dmodel: DetectorModel, x: int, y: int, word: int,
                last_box_area: int) -> DetectDecision:
    """Feed one event (with its codeword) to the detector."""
    if dmodel.mask[word]:
        dstate.M[y, x] += 1
        dstate.count += 1
        if dstate.M[y, x] > dstate.tau_c:
            dstate.Mb[y, x] = True
    if dstate.count <= dstate.trigger:
        return DetectDecision("accumulating", tau_c=dstate.tau_c)
    try:
        box = largest_component(dilate_cross(dstate.Mb))
    except NoComponent:
        # a higher threshold cannot produce a blob; collect again as is
        dstate.reset()
        return DetectDecision("empty", tau_c=dstate.tau_c)
    dstate.reset()
    if box.area < last_box_area:
        return DetectDecision("found", box, dstate.tau_c)
    dstate.tau_c += 1
    return DetectDecision("retry", box, dstate.tau_c)


# -- orchestration ---------------------------------------------------------------

@dataclass(frozen=True)
class ElotConfig:
    grid: LogPolarGrid = field(default_factory=build_grid)
    fifo_size: int = FIFO_SIZE
    theta_noise: float = THETA_NOISE_US
    theta_ref: float = THETA_REF_US
    K: int = K_TRACK
    n_trees: int = N_TREES
    max_checks: int = MAX_CHECKS
    kernel: KernelMapConfig = field(default_factory=KernelMapConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    purity: float = DETECTOR_PURITY
    tau_d: float = DETECTOR_FRACTION
    init_window_us: int = INIT_WINDOW_US
    bootstrap_draw: int = BOOTSTRAP_DRAW
    svm_C: float = SVM_C
    svm_epochs: int = SVM_EPOCHS
    kmeans_iters: int = 50
    seed: int = 0


@dataclass(frozen=True)
class TrackResult:
    t_decision: int
    mode: str  # init | tracked | lost | detected
    box: Optional[BoundingBox]
    score: Optional[float] = None


def train_one_shot(filtered: EventStream, descriptors: np.ndarray, roi0: BoundingBox,
                   cfg: ElotConfig) -> OneShotModel:
    t0 = int(filtered.t[0]) if len(filtered) else 0
    init = filtered.t < t0 + cfg.init_window_us
    in_roi = roi0.contains(filtered.x, filtered.y)
    return bootstrap_train(descriptors[init & in_roi], descriptors[init & ~in_roi], cfg.K,
                           cfg.seed, cfg.grid.n_w, cfg.kernel, cfg.purity,
                           cfg.bootstrap_draw, cfg.svm_C, cfg.svm_epochs, cfg.kmeans_iters,
                           cfg.n_trees, cfg.max_checks)


def elot_run(stream: EventStream, roi0: BoundingBox, cfg: ElotConfig = ElotConfig(),
             model: Optional[OneShotModel] = None) -> list[TrackResult]:
    """Train on the initial window, then alternate tracker and detector to the end."""
    filtered = cascade(stream, cfg.theta_noise, cfg.theta_ref)
    desc = DartEngine(cfg.grid, stream.width, stream.height, cfg.fifo_size).describe(filtered)
    if model is None:
        model = train_one_shot(filtered, desc, roi0, cfg)
    svm = model.svm.copy()
    t_start = int(filtered.t[0]) if len(filtered) else 0
    start = int(np.searchsorted(filtered.t, t_start + cfg.init_window_us, side="left"))
    results = [TrackResult(t_start, "init", roi0)]
    if start >= len(filtered):
        return results
    words = model.codebook.quantize(desc[start:], model.forest)
    xs = filtered.x[start:].tolist()
    ys = filtered.y[start:].tolist()
    ts = filtered.t[start:].tolist()
    W, H, K = stream.width, stream.height, model.codebook.K

    tracker: Optional[TrackerState] = TrackerState(roi0, W, H, K)
    detector: Optional[DetectorState] = None
    last_area = roi0.area
    for x, y, t, wd in zip(xs, ys, ts, words.tolist()):
        if tracker is not None:
            dec = track_step(tracker, svm, x, y, wd, cfg.tracker, cfg.kernel)
            if dec.kind == "updated":
                results.append(TrackResult(t, "tracked", dec.box, dec.score))
            elif dec.kind == "lost":
                # the last tracked box stays in force while the detector searches
                results.append(TrackResult(t, "lost", tracker.box, dec.score))
                # dilation widens a blob by one pixel per side, so compare it with the padded box
                last_area = tracker.box.padded(cfg.tracker.pad_x, cfg.tracker.pad_y, W, H).area
                tracker = None
                detector = DetectorState(W, H, cfg.tau_d)
        else:
            ddec = detect_step(detector, model.detector, x, y, wd, last_area)
            if ddec.kind == "found":
                results.append(TrackResult(t, "detected", ddec.box, None))
                # a fresh tracker run starts at t = 1; the score history lives in the model
                tracker = TrackerState(ddec.box, W, H, K)
                detector = None
    return results


def boxes_for_intervals(results: Sequence[TrackResult], intervals: Iterable[tuple[int, int]]
                        ) -> list[Optional[BoundingBox]]:
    """The box in force at the end of each ``[t0, t1)`` interval (None before the first result)."""
    times = [r.t_decision for r in results]
    out = []
    for _, t1 in intervals:
        i = int(np.searchsorted(times, t1, side="left")) - 1
        out.append(results[i].box if i >= 0 else None)
    return out


def format_track_csv(results: Sequence[TrackResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_decision_us", "mode", "x_min", "y_min", "x_max", "y_max", "score"])
    for r in results:
        box = r.box.as_tuple() if r.box else ("", "", "", "")
        w.writerow([r.t_decision, r.mode, *box, "" if r.score is None else repr(r.score)])
    return buf.getvalue()


def parse_track_csv(text: str) -> list[TrackResult]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        box = None
        if row["x_min"] != "":
            box = BoundingBox(int(row["x_min"]), int(row["y_min"]), int(row["x_max"]),
                              int(row["y_max"]))
        score = float(row["score"]) if row["score"] else None
        out.append(TrackResult(int(row["t_decision_us"]), row["mode"], box, score))
    return out
