"""Tracking and classification metrics.

Tracking quality is judged on events, not box geometry: inside each 10 ms
annotation interval the events covered by the predicted box and by the
ground-truth box are counted, and their overlap gives an event IoU.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NoGroundTruth, NoSuccesses
from .events import AnnotationTrack, BoundingBox, EventStream

OVERLAP_THRESHOLD = 0.5


@dataclass(frozen=True)
class IntervalMetrics:
    tp: int
    fp: int
    fn: int
    has_gt: bool
    has_pred: bool

    @property
    def iou(self) -> float:
        d = self.tp + self.fp + self.fn
        return self.tp / d if d else 0.0

    @property
    def skipped(self) -> bool:
        return not (self.has_gt or self.has_pred)


def iou_interval(pred: Optional[BoundingBox], gt: Optional[BoundingBox], xs, ys
                 ) -> IntervalMetrics:
    """Event counts inside both boxes (TP), the prediction only (FP) and the truth only (FN)."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    zero = np.zeros(len(xs), np.bool_)
    in_p = pred.contains(xs, ys) if pred is not None else zero
    in_g = gt.contains(xs, ys) if gt is not None else zero
    return IntervalMetrics(int(np.count_nonzero(in_p & in_g)), int(np.count_nonzero(in_p & ~in_g)),
                           int(np.count_nonzero(in_g & ~in_p)), gt is not None, pred is not None)


def os_metric(ious: Sequence[float], has_gt: Sequence[bool] | None = None,
              threshold: float = OVERLAP_THRESHOLD) -> float:
    """Fraction of ground-truth intervals whose event IoU reaches ``threshold``."""
    ious = np.asarray(ious, dtype=np.float64)
    mask = np.ones(len(ious), np.bool_) if has_gt is None else np.asarray(has_gt, np.bool_)
    if not mask.any():
        raise NoGroundTruth("no interval carries a ground-truth box")
    return float(np.mean(ious[mask] >= threshold))


def cle_metric(preds: Sequence[Optional[BoundingBox]], gts: Sequence[Optional[BoundingBox]],
               success: Sequence[bool]) -> tuple[float, float]:
    """Mean centre error over successful intervals: (diagonal-normalized, pixels)."""
    norm, px = [], []
    for p, g, ok in zip(preds, gts, success):
        if not ok or p is None or g is None:
            continue
        (pcx, pcy), (gcx, gcy) = p.center, g.center
        e = math.hypot(pcx - gcx, pcy - gcy)
        px.append(e)
        norm.append(e / g.diagonal)
    if not px:
        raise NoSuccesses("no successful interval to measure centre error on")
    return float(np.mean(norm)), float(np.mean(px))


@dataclass(frozen=True)
class AccuracyReport:
    overall: float
    class_averaged: float
    labels: list[int]
    confusion: np.ndarray  # rows actual, columns predicted


def accuracy(y_true: Sequence[int], y_pred: Sequence[int],
             labels: Optional[Sequence[int]] = None) -> AccuracyReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError("need equally many (and at least one) true and predicted labels")
    labels = sorted(set(y_true.tolist()) | set(y_pred.tolist())) if labels is None else list(labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), np.int64)
    for a, p in zip(y_true.tolist(), y_pred.tolist()):
        cm[pos[a], pos[p]] += 1
    rows = cm.sum(axis=1)
    present = rows > 0
    per_class = np.diag(cm)[present] / rows[present]
    return AccuracyReport(float(np.trace(cm) / len(y_true)), float(per_class.mean()),
                          labels, cm)


# -- track evaluation ------------------------------------------------------------

@dataclass(frozen=True)
class TrackReport:
    intervals: list[IntervalMetrics]
    os: float
    iou: float
    cle_norm: Optional[float]
    cle_px: Optional[float]

    @property
    def evaluated(self) -> int:
        return sum(not m.skipped for m in self.intervals)


def evaluate_track(stream: EventStream, gt: AnnotationTrack,
                   preds: Sequence[Optional[BoundingBox]],
                   threshold: float = OVERLAP_THRESHOLD) -> TrackReport:
    """Score one box per annotation interval against the ground truth.

    ``stream`` supplies the events counted in each interval (normally the
    filtered stream the tracker consumed). Mean IoU covers every interval
    that has a ground-truth box or a prediction.
    """
    if len(preds) != len(gt):
        raise ValueError("one prediction per annotation interval is required")
    ms = []
    for iv, p in zip(gt, preds):
        lo, hi = np.searchsorted(stream.t, [iv.t_start, iv.t_end], side="left")
        ms.append(iou_interval(p, iv.box, stream.x[lo:hi], stream.y[lo:hi]))
    has_gt = [m.has_gt for m in ms]
    ious = [m.iou for m in ms]
    os_ = os_metric(ious, has_gt, threshold)
    kept = [m.iou for m in ms if not m.skipped]
    success = [m.has_gt and m.iou >= threshold for m in ms]
    try:
        cle_n, cle_p = cle_metric(preds, [iv.box for iv in gt], success)
    except NoSuccesses:
        cle_n = cle_p = None
    return TrackReport(ms, os_, float(np.mean(kept)), cle_n, cle_p)


def format_metrics_csv(rows: Sequence[tuple[str, TrackReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recording", "OS", "CLE_norm", "CLE_px", "IoU", "intervals"])
    for name, r in rows:
        w.writerow([name, f"{r.os:.4f}", "" if r.cle_norm is None else f"{r.cle_norm:.4f}",
                    "" if r.cle_px is None else f"{r.cle_px:.3f}", f"{r.iou:.4f}", r.evaluated])
    return buf.getvalue()


def format_summary(rows: Sequence[tuple[str, TrackReport]]) -> str:
    lines = [f"{'recording':<24} {'OS':>7} {'CLE_norm':>9} {'CLE_px':>8} {'IoU':>7}"]
    for name, r in rows:
        cn = "-" if r.cle_norm is None else f"{r.cle_norm:.4f}"
        cp = "-" if r.cle_px is None else f"{r.cle_px:.2f}"
        lines.append(f"{name:<24} {r.os:>7.4f} {cn:>9} {cp:>8} {r.iou:>7.4f}")
    if len(rows) > 1:
        cns = [r.cle_norm for _, r in rows if r.cle_norm is not None]
        cps = [r.cle_px for _, r in rows if r.cle_px is not None]
        lines.append(f"{'average':<24} {np.mean([r.os for _, r in rows]):>7.4f} "
                     f"{(f'{np.mean(cns):.4f}' if cns else '-'):>9} "
                     f"{(f'{np.mean(cps):.2f}' if cps else '-'):>8} "
                     f"{np.mean([r.iou for _, r in rows]):>7.4f}")
    return "\n".join(lines) + "\n"
