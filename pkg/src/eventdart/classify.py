"""Linear SVMs over kernel-mapped bag-of-words vectors, and the classification pipeline."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import encoding
from .dart import FIFO_SIZE, DartEngine, LogPolarGrid, build_grid
from .encoding import Codebook, KdForest, KernelMapConfig, kernel_map, spm_pool
from .errors import DegenerateTraining, NoEvidence, ShapeError
from .events import EventStream
from .filtering import THETA_NOISE_US, THETA_REF_US, cascade

SVM_C = 1.0
SVM_EPOCHS = 50
ONLINE_RATE_FACTOR = 0.01


@dataclass(eq=False)
class SvmModel:
    """Primal linear SVM ``score = w . psi + b`` plus a running mean of accepted scores."""

    w: np.ndarray
    b: float = 0.0
    C: float = SVM_C
    lam: float = 1.0
    steps: int = 0
    final_step: float = 0.0
    score_sum: float = 0.0
    score_count: int = 0
    objective: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.w)

    @property
    def online_rate(self) -> float:
        return ONLINE_RATE_FACTOR * self.final_step

    @property
    def score_mean(self) -> Optional[float]:
        return self.score_sum / self.score_count if self.score_count else None

    def record_score(self, s: float) -> None:
        self.score_sum += s
        self.score_count += 1

    def copy(self) -> "SvmModel":
        return SvmModel(self.w.copy(), self.b, self.C, self.lam, self.steps, self.final_step,
                        self.score_sum, self.score_count, list(self.objective))


@njit(cache=True)
def _sgd_epoch(X, y, order, w, bias, lam, t0):
    # bias acts as the weight of a constant-1 feature: shrunk and projected with w
    t = t0
    radius2 = 1.0 / lam
    for k in range(order.shape[0]):
        i = order[k]
        t += 1
        eta = 1.0 / (lam * t)
        s = bias[0]
        for j in range(X.shape[1]):
            s += w[j] * X[i, j]
        shrink = 1.0 - eta * lam
        for j in range(X.shape[1]):
            w[j] *= shrink
        bias[0] *= shrink
        if y[i] * s < 1.0:
            step = eta * y[i]
            for j in range(X.shape[1]):
                w[j] += step * X[i, j]
            bias[0] += step
        norm2 = bias[0] * bias[0]
        for j in range(X.shape[1]):
            norm2 += w[j] * w[j]
        if norm2 > radius2:
            scale = np.sqrt(radius2 / norm2)
            for j in range(X.shape[1]):
                w[j] *= scale
            bias[0] *= scale
    return t


def hinge_objective(model: SvmModel, X: np.ndarray, y: np.ndarray) -> float:
    margins = y * (X @ model.w + model.b)
    reg = float(model.w @ model.w) + model.b * model.b
    return 0.5 * model.lam * reg + float(np.maximum(0.0, 1.0 - margins).mean())


def svm_train(X: np.ndarray, y: np.ndarray, C: float = SVM_C, epochs: int = SVM_EPOCHS,
              seed: int = 0) -> SvmModel:
    """Stochastic subgradient descent on ``lam/2 |w|^2 + mean hinge``.

    ``lam = 1 / (C n)`` and step ``1 / (lam t)``. The bias is treated as the
    weight of a constant feature (regularized, and projected onto the
    ``1/sqrt(lam)`` ball together with ``w``). Sample order is a seeded permutation per epoch, so training is
    bit-reproducible.
    """
    X = np.ascontiguousarray(X)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError("samples and labels disagree in shape")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateTraining("training needs both positive and negative samples")
    n = len(X)
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    bias = np.zeros(1)
    t = 0
    model = SvmModel(w, 0.0, C, lam)
    for _ in range(epochs):
        t = _sgd_epoch(X, y, rng.permutation(n), w, bias, lam, t)
        model.b = float(bias[0])
        model.objective.append(hinge_objective(model, X, y))
    model.steps = t
    model.final_step = 1.0 / (lam * t)
    return model


def svm_score(model: SvmModel, psi: np.ndarray):
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape[-1] != model.dim:
        raise ShapeError(f"input dimension {psi.shape[-1]} != model dimension {model.dim}")
    s = psi @ model.w + model.b
    return float(s) if np.ndim(s) == 0 else s


def svm_update_online(model: SvmModel, psi: np.ndarray, label: int,
                      rate: Optional[float] = None) -> None:
    """One hinge subgradient step at ``(psi, label)``; shrink-only when the margin holds."""
    rate = model.online_rate if rate is None else rate
    score = svm_score(model, psi)
    model.w *= 1.0 - rate * model.lam
    model.b *= 1.0 - rate * model.lam
    if label * score < 1.0:
        model.w += rate * label * np.asarray(psi, dtype=np.float64)
        model.b += rate * label
    model.steps += 1


@dataclass(eq=False)
class MulticlassModel:
    labels: list[int]
    models: list[SvmModel]

    def __post_init__(self):
        if len({m.dim for m in self.models}) > 1:
            raise ShapeError("one-vs-rest members disagree in dimension")

    @property
    def dim(self) -> int:
        return self.models[0].dim

    def scores(self, psi: np.ndarray) -> np.ndarray:
        W = np.stack([m.w for m in self.models])
        b = np.array([m.b for m in self.models])
        psi = np.asarray(psi, dtype=np.float64)
        if psi.shape[-1] != W.shape[1]:
            raise ShapeError(f"input dimension {psi.shape[-1]} != model dimension {W.shape[1]}")
        return psi @ W.T + b

    def predict(self, psi: np.ndarray):
        """Label with the highest score; ties go to the lowest label."""
        s = self.scores(psi)
        order = np.argsort(self.labels, kind="stable")
        best = order[np.argmax(s[..., order], axis=-1)]
        lab = np.asarray(self.labels)[best]
        return int(lab) if np.ndim(lab) == 0 else lab


def train_multiclass(X: np.ndarray, labels: Sequence[int], C: float = SVM_C,
                     epochs: int = SVM_EPOCHS, seed: int = 0) -> MulticlassModel:
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise DegenerateTraining("need at least two classes")
    models = [svm_train(X, np.where(labels == c, 1.0, -1.0), C, epochs, seed + k)
              for k, c in enumerate(classes)]
    return MulticlassModel([int(c) for c in classes], models)


# -- model files ------------------------------------------------------------

MODEL_MAGIC = b"DSVM"
_MODEL_HEADER = struct.Struct("<4sIII")
_MODEL_ENTRY = struct.Struct("<qdddqddq")


def write_model(path, model: MulticlassModel | SvmModel) -> None:
    if isinstance(model, SvmModel):
        model = MulticlassModel([1], [model])
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, 1, len(model.models), model.dim))
        for lab, m in zip(model.labels, model.models):
            fh.write(_MODEL_ENTRY.pack(lab, m.b, m.C, m.lam, m.steps, m.final_step,
                                       m.score_sum, m.score_count))
            fh.write(np.asarray(m.w, dtype="<f8").tobytes())


def read_model(path) -> MulticlassModel:
    data = Path(path).read_bytes()
    magic, _version, n, dim = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    off = _MODEL_HEADER.size
    labels, models = [], []
    for _ in range(n):
        lab, b, C, lam, steps, final_step, ssum, scount = _MODEL_ENTRY.unpack_from(data, off)
        off += _MODEL_ENTRY.size
        w = np.frombuffer(data, dtype="<f8", count=dim, offset=off).copy()
        off += 8 * dim
        labels.append(lab)
        models.append(SvmModel(w, b, C, lam, steps, final_step, ssum, scount))
    return MulticlassModel(labels, models)


# -- pipeline ---------------------------------------------------------------

@dataclass(eq=False)
class ClassifierPipeline:
    """Trained artifacts plus the settings needed to turn a stream into a label."""

    codebook: Codebook
    model: Optional[MulticlassModel] = None
    forest: Optional[KdForest] = None
    grid: LogPolarGrid = field(default_factory=build_grid)
    fifo_size: int = FIFO_SIZE
    theta_noise: float = THETA_NOISE_US
    theta_ref: float = THETA_REF_US
    spm_levels: tuple[int, ...] = encoding.SPM_LEVELS
    kernel: KernelMapConfig = field(default_factory=KernelMapConfig)

    def preprocess(self, stream: EventStream) -> tuple[EventStream, np.ndarray]:
        """Filter the stream and quantize each surviving event's descriptor."""
        kept = cascade(stream, self.theta_noise, self.theta_ref)
        desc = DartEngine(self.grid, stream.width, stream.height, self.fifo_size).describe(kept)
        words = self.codebook.quantize(desc, self.forest) if len(kept) else np.zeros(0, np.int64)
        return kept, words

    def pool(self, kept: EventStream, words: np.ndarray) -> np.ndarray:
        if self.spm_levels:
            h = spm_pool(kept.x, kept.y, words, kept.width, kept.height, self.codebook.K,
                         self.spm_levels)
        else:
            h = encoding.bow_pool(words, self.codebook.K)
        return kernel_map(h, self.kernel)

    def represent(self, stream: EventStream) -> np.ndarray:
        kept, words = self.preprocess(stream)
        if not len(kept):
            raise NoEvidence(f"{stream.source or 'stream'}: no events survive filtering")
        return self.pool(kept, words)

    def represent_prefixes(self, stream: EventStream, ends_us: Sequence[int]) -> list[np.ndarray]:
        """Representations of the events with ``t < t_first + end`` for each end offset.

        Filtering and descriptor extraction are causal, so one pass over the
        full stream serves every prefix.
        """
        kept, words = self.preprocess(stream)
        t0 = int(stream.t[0]) if len(stream) else 0
        out = []
        for end in ends_us:
            n = int(np.searchsorted(kept.t, t0 + end, side="left"))
            if n == 0:
                raise NoEvidence(f"no events within the first {end} us")
            out.append(self.pool(kept.select(np.s_[:n]), words[:n]))
        return out

    def classify(self, stream: EventStream) -> int:
        if self.model is None:
            raise ValueError("pipeline has no trained model")
        return self.model.predict(self.represent(stream))


def classify_pipeline(stream: EventStream, pipeline: ClassifierPipeline) -> int:
    return pipeline.classify(stream)


def sample_descriptors(pipeline: ClassifierPipeline, streams: Sequence[EventStream],
                       max_descriptors: int, seed: int = 0) -> np.ndarray:
    """Filtered-event descriptors from many streams, uniformly subsampled to a budget."""
    per = []
    for s in streams:
        kept = cascade(s, pipeline.theta_noise, pipeline.theta_ref)
        per.append(DartEngine(pipeline.grid, s.width, s.height, pipeline.fifo_size).describe(kept))
    X = np.concatenate(per) if per else np.zeros((0, pipeline.grid.n_bins))
    if len(X) > max_descriptors:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(len(X), max_descriptors, replace=False))]
    return X


def train_classifier(streams: Sequence[EventStream], labels: Sequence[int], K: int,
                     seed: int = 0, max_descriptors: int = 200_000, kmeans_iters: int = 50,
                     C: float = SVM_C, epochs: int = SVM_EPOCHS, use_forest: bool = False,
                     max_checks: int = 64, **settings) -> ClassifierPipeline:
    """Codebook from pooled training descriptors, then one-vs-rest SVMs."""
    pipe = ClassifierPipeline(codebook=None, **settings)  # type: ignore[arg-type]
    X = sample_descriptors(pipe, streams, max_descriptors, seed)
    pipe.codebook = encoding.kmeans_train(X, K, kmeans_iters, seed)
    if use_forest:
        pipe.forest = encoding.build_forest(pipe.codebook, encoding.N_TREES, seed, max_checks)
    feats = np.stack([pipe.represent(s) for s in streams]).astype(np.float32)
    pipe.model = train_multiclass(feats, labels, C, epochs, seed)
    return pipe
