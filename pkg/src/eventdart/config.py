"""Flat ``key = value`` pipeline configuration with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .classify import SVM_C, SVM_EPOCHS
from .dart import FIFO_SIZE, N_RINGS, N_WEDGES, R_MAX, R_MIN, build_grid
from .elot import (BOOTSTRAP_DRAW, DETECTOR_FRACTION, DETECTOR_PURITY, INIT_WINDOW_US,
                   ElotConfig, TrackerConfig)
from .encoding import (K_CLASSIFY, K_TRACK, KERNEL_ORDER, KERNEL_PERIOD, MAX_CHECKS, N_TREES,
                       SPM_LEVELS, KernelMapConfig)
from .errors import ConfigError
from .filtering import THETA_NOISE_US, THETA_REF_US
from .matching import RATIO


@dataclass(frozen=True)
class PipelineConfig:
    n_rings: int = N_RINGS
    n_wedges: int = N_WEDGES
    r_min: float = R_MIN
    r_max: float = R_MAX
    fifo_size: int = FIFO_SIZE
    theta_noise_us: int = THETA_NOISE_US
    theta_ref_us: int = THETA_REF_US
    k_classify: int = K_CLASSIFY
    k_track: int = K_TRACK
    kmeans_iters: int = 50
    max_descriptors: int = 200_000
    n_trees: int = N_TREES
    max_checks: int = MAX_CHECKS
    classify_forest: bool = False
    spm_levels: tuple[int, ...] = SPM_LEVELS
    kernel_order: int = KERNEL_ORDER
    kernel_period: float = KERNEL_PERIOD
    svm_c: float = SVM_C
    svm_epochs: int = SVM_EPOCHS
    tracker_rate: float = 0.05
    pad_x: int = 1
    pad_y: int = 1
    fail_threshold: int = 3
    history_all: bool = True
    purity: float = DETECTOR_PURITY
    tau_d: float = DETECTOR_FRACTION
    init_window_us: int = INIT_WINDOW_US
    bootstrap_draw: int = BOOTSTRAP_DRAW
    match_ratio: float = RATIO
    match_every: int = 1
    seed: int = 0
    dataset_root: str = ""

    def __post_init__(self):
        try:
            build_grid(self.n_rings, self.n_wedges, self.r_min, self.r_max)
            KernelMapConfig(self.kernel_order, self.kernel_period)
            TrackerConfig(self.tracker_rate, self.pad_x, self.pad_y, self.fail_threshold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        positive = ("fifo_size", "k_classify", "k_track", "kmeans_iters", "max_descriptors",
                    "n_trees", "max_checks", "svm_epochs", "init_window_us", "bootstrap_draw",
                    "match_every")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.theta_noise_us < 0 or self.theta_ref_us < 0 or self.svm_c <= 0:
            raise ConfigError("thresholds must be non-negative and svm_c positive")
        if not 0 < self.match_ratio <= 1 or not 0 <= self.purity <= 1 or self.tau_d <= 0:
            raise ConfigError("match_ratio, purity or tau_d out of range")
        if any(level < 1 for level in self.spm_levels):
            raise ConfigError("SPM levels must be positive")

    # -- conversions --
    def grid(self):
        return build_grid(self.n_rings, self.n_wedges, self.r_min, self.r_max)

    def kernel(self) -> KernelMapConfig:
        return KernelMapConfig(self.kernel_order, self.kernel_period)

    def pipeline_settings(self) -> dict[str, Any]:
        return dict(grid=self.grid(), fifo_size=self.fifo_size, theta_noise=self.theta_noise_us,
                    theta_ref=self.theta_ref_us, spm_levels=tuple(self.spm_levels),
                    kernel=self.kernel())

    def elot(self) -> ElotConfig:
        return ElotConfig(
            grid=self.grid(), fifo_size=self.fifo_size, theta_noise=self.theta_noise_us,
            theta_ref=self.theta_ref_us, K=self.k_track, n_trees=self.n_trees,
            max_checks=self.max_checks, kernel=self.kernel(),
            tracker=TrackerConfig(self.tracker_rate, self.pad_x, self.pad_y, self.fail_threshold,
                                  self.history_all),
            purity=self.purity, tau_d=self.tau_d, init_window_us=self.init_window_us,
            bootstrap_draw=self.bootstrap_draw, svm_C=self.svm_c, svm_epochs=self.svm_epochs,
            kmeans_iters=self.kmeans_iters, seed=self.seed)

    def replace(self, **changes) -> "PipelineConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    values: dict[str, Any] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {n}: unknown configuration key {key!r}")
        values[key] = _coerce(key, raw)
    return (base or PipelineConfig()).replace(**values)


def format_config(cfg: PipelineConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> PipelineConfig:
    cfg = parse_config(Path(path).read_text()) if path else PipelineConfig()
    if overrides:
        unknown = set(overrides) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        cfg = cfg.replace(**{k: _coerce(k, v) for k, v in overrides.items()})
    return cfg
