"""Per-parameter importance scores, layer statistics, and send masks.

A parameter's importance is the magnitude of its accumulated gradient
relative to the magnitude of the weight it would change. Each layer gets its
own send threshold, derived from the dispersion (variance / mean) of the
layer's scores: a disordered layer raises its threshold, a uniformly
important one lowers it. Parameters at or above the layer threshold are
always selected; parameters below it are selected with probability
score / threshold, which keeps long-unsent residuals from going stale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import BitMask
from .errors import ConfigError, InputError, StructuralError
from .layout import LayerLayout
from .seeds import ParamStream

# Guard for |weight| when scoring; keeps scores finite for zero weights
# without disturbing the ranking of normal-magnitude ones.
DEFAULT_WEIGHT_EPS = 1e-8

# Guard for the variance/mean ratio when a layer's mean score is zero.
STAT_EPS = 1e-12

# Open-ended schedule spans run "to the end"; stored as a very large epoch.
SCHEDULE_OPEN_END = 2**62


@dataclass(frozen=True)
class EpochSchedule:
    """Piecewise-constant value over epoch ranges [start, end)."""

    spans: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        prev_end = None
        for start, end, _value in self.spans:
            if start >= end:
                raise ConfigError(f"schedule span [{start}, {end}) is empty")
            if prev_end is not None and start < prev_end:
                raise ConfigError("schedule spans overlap or are out of order")
            prev_end = end

    @classmethod
    def constant(cls, value: float) -> "EpochSchedule":
        return cls(((0, SCHEDULE_OPEN_END, float(value)),))

    def value_at(self, epoch: int) -> float:
        for start, end, value in self.spans:
            if start <= epoch < end:
                return value
        raise ConfigError(f"epoch {epoch} is not covered by the schedule")

    def covers(self, first_epoch: int, last_epoch: int) -> bool:
        try:
            for epoch in range(first_epoch, last_epoch + 1):
                self.value_at(epoch)
        except ConfigError:
            return False
        return True


@dataclass(frozen=True)
class LayerStats:
    """Mean, population variance, and dispersion ratio of one layer's scores."""

    mean: float
    variance: float
    ratio: float


@dataclass(frozen=True)
class ThresholdPolicy:
    """Layer-wise threshold rule plus warm-up behaviour.

    threshold(layer) = base(epoch) + ratio_weight(epoch) * dispersion  when
    the dispersion ratio exceeds ``ratio_pivot``, and base - weight * ratio
    otherwise, clamped into [thr_min, thr_max]. During the first
    ``warmup_epochs`` epochs the threshold is 0, which forces dense sends.
    ``scale`` is an optional global multiplier on the computed threshold
    (1.0 leaves it off).
    """

    base: EpochSchedule
    ratio_weight: EpochSchedule
    ratio_pivot: float = 1.0
    thr_min: float = 1e-6
    thr_max: float = 1.0
    warmup_epochs: int = 1
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.ratio_pivot <= 0:
            raise ConfigError(f"ratio_pivot must be > 0, got {self.ratio_pivot}")
        if self.thr_min <= 0:
            raise ConfigError(f"thr_min must be > 0, got {self.thr_min}")
        if self.thr_min > self.thr_max:
            raise ConfigError(
                f"thr_min {self.thr_min} exceeds thr_max {self.thr_max}"
            )
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.scale <= 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")

    @classmethod
    def fixed(cls, threshold: float, *, warmup_epochs: int = 1, thr_max: float = 1.0) -> "ThresholdPolicy":
        """Constant threshold for every layer and epoch (dispersion ignored)."""
        return cls(
            base=EpochSchedule.constant(threshold),
            ratio_weight=EpochSchedule.constant(0.0),
            thr_max=max(thr_max, threshold),
            warmup_epochs=warmup_epochs,
        )


@dataclass(frozen=True)
class ImportanceVector:
    """Non-negative per-parameter scores tied to a layer layout."""

    scores: np.ndarray
    layout: LayerLayout

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.scores, dtype=np.float64))
        if arr.ndim != 1:
            raise StructuralError("scores must be one-dimensional")
        if arr.shape[0] != self.layout.total_length:
            raise StructuralError(
                f"score count {arr.shape[0]} does not match layout length "
                f"{self.layout.total_length}"
            )
        if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr < 0)):
            raise StructuralError("scores must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)

    def layer_scores(self, layer_index: int) -> np.ndarray:
        return self.scores[self.layout.slice_of(layer_index)]


def _first_nonfinite(arr: np.ndarray) -> int:
    return int(np.flatnonzero(~np.isfinite(arr))[0])


def compute_importance(
    accumulated_grad: np.ndarray,
    weights: np.ndarray,
    layout: LayerLayout,
    eps: float = DEFAULT_WEIGHT_EPS,
) -> ImportanceVector:
    """Score each parameter as |accumulated gradient| / max(|weight|, eps)."""
    if eps <= 0:
        raise InputError(f"eps must be > 0, got {eps}")
    g = np.asarray(accumulated_grad, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if g.shape != w.shape or g.ndim != 1:
        raise StructuralError(
            f"gradient shape {g.shape} does not match weight shape {w.shape}"
        )
    if g.shape[0] != layout.total_length:
        raise StructuralError(
            f"vector length {g.shape[0]} does not match layout length {layout.total_length}"
        )
    if not np.all(np.isfinite(g)):
        raise InputError(f"non-finite gradient at index {_first_nonfinite(g)}")
    if not np.all(np.isfinite(w)):
        raise InputError(f"non-finite weight at index {_first_nonfinite(w)}")
    scores = np.abs(g) / np.maximum(np.abs(w), eps)
    return ImportanceVector(scores=scores, layout=layout)


def layer_stats(imp: ImportanceVector, layer_index: int) -> LayerStats:
    """Mean, population variance, and variance/mean ratio for one layer."""
    scores = imp.layer_scores(layer_index)
    if scores.size == 0:
        raise StructuralError(f"layer {layer_index} is empty")
    mean = float(scores.mean())
    if np.all(scores == scores[0]):
        variance = 0.0  # exact for constant layers, including single-parameter ones
    else:
        variance = float(np.mean((scores - mean) ** 2))
    ratio = variance / max(mean, STAT_EPS)
    return LayerStats(mean=mean, variance=variance, ratio=ratio)


def layer_threshold(policy: ThresholdPolicy, epoch: int, stats: LayerStats) -> float:
    """Send threshold for one layer at one epoch.

    Warm-up epochs return 0 (dense sends) without consulting the schedules.
    """
    if epoch < policy.warmup_epochs:
        return 0.0
    base = policy.base.value_at(epoch)
    weight = policy.ratio_weight.value_at(epoch)
    if stats.ratio > policy.ratio_pivot:
        thr = base + weight * stats.ratio
    else:
        thr = base - weight * stats.ratio
    thr *= policy.scale
    return min(max(thr, policy.thr_min), policy.thr_max)


def thresholds_for(imp: ImportanceVector, policy: ThresholdPolicy, epoch: int) -> list[float]:
    """Per-layer thresholds for a whole importance vector."""
    return [
        layer_threshold(policy, epoch, layer_stats(imp, j))
        for j in range(imp.layout.n_layers)
    ]


def build_local_mask(
    imp: ImportanceVector,
    thr_by_layer: list[float],
    stream: ParamStream,
) -> BitMask:
    """One node's send-candidate mask.

    A parameter is selected deterministically when its score reaches the
    layer threshold, and otherwise independently with probability
    score / threshold. A zero threshold selects the whole layer; an infinite
    threshold selects nothing. Draws come from the per-layer substreams of
    ``stream``, so the result is bit-reproducible for a fixed seed.
    """
    layout = imp.layout
    if len(thr_by_layer) != layout.n_layers:
        raise StructuralError(
            f"{len(thr_by_layer)} thresholds supplied for {layout.n_layers} layers"
        )
    bits = np.zeros(layout.total_length, dtype=bool)
    for j in range(layout.n_layers):
        thr = float(thr_by_layer[j])
        if thr < 0 or np.isnan(thr):
            raise InputError(f"threshold for layer {j} must be >= 0, got {thr}")
        sl = layout.slice_of(j)
        scores = imp.scores[sl]
        if thr == 0.0:
            bits[sl] = True
            continue
        if np.isinf(thr):
            continue  # score/thr = 0, nothing can be selected
        uniforms = stream.layer(j).random(scores.shape[0])
        bits[sl] = (scores >= thr) | (uniforms < scores / thr)
    return BitMask(bits)
