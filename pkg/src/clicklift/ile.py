"""Offline label enhancement: swap a pseudo label for a better predicted mask.

Among the candidate predicted instances, the one with maximal IoU against
the existing label wins; the swap happens only when the candidate's
confidence clears a (possibly distance-adjusted) score threshold and its
IoU clears the IoU threshold. Otherwise the label is kept verbatim. The
output is always either the original set or one candidate's set, never a
blend.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .tsu import SCALE_ALGORITHM, SCALE_PROSE


@dataclass
class IleConfig:
    score_threshold: float = 0.5        # T_s2
    iou_threshold: float = 0.5          # T_IoU
    distance_normalizer: float = 20.0   # D, meters
    distance_adjust: bool = False
    scaling: str = SCALE_ALGORITHM
    score_clamp: tuple = (0.2, 0.95)

    def __post_init__(self):
        if not (0.0 < self.score_threshold <= 1.0):
            raise ConfigError("score_threshold must be in (0, 1]")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ConfigError("iou_threshold must be in (0, 1]")
        if self.distance_normalizer <= 0:
            raise ConfigError("distance_normalizer must be > 0")
        if self.scaling not in (SCALE_ALGORITHM, SCALE_PROSE):
            raise ConfigError(f"unknown scaling direction {self.scaling!r}")


@dataclass
class PredictedInstance:
    indices: np.ndarray                 # frame-level point indices
    score: float

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(self.indices) == 0:
            raise InputError("predicted instance must have at least one point")
        if not np.isfinite(self.score):
            raise InputError("instance score must be finite")


def iou(a, b) -> float:
    """|a & b| / |a | b| over point index sets; two empty sets score 0."""
    a = np.unique(np.asarray(a, dtype=np.int64))
    b = np.unique(np.asarray(b, dtype=np.int64))
    union = len(np.union1d(a, b))
    if union == 0:
        return 0.0
    return len(np.intersect1d(a, b)) / union


def adjusted_score_threshold(cfg: IleConfig, instance_range: float) -> float:
    """T'_s2 after optional distance scaling (same machinery as the voting gates)."""
    if not cfg.distance_adjust:
        return cfg.score_threshold
    if cfg.scaling == SCALE_ALGORITHM:
        scaled = (instance_range / cfg.distance_normalizer) * cfg.score_threshold
    else:
        scaled = (cfg.distance_normalizer / max(instance_range, 1e-9)) * cfg.score_threshold
    return float(min(max(scaled, cfg.score_clamp[0]), cfg.score_clamp[1]))


def ile_update(label_indices, candidates, instance_range: float, cfg: IleConfig):
    """Return (indices, replaced) after the IoU-guided swap rule.

    The winning candidate maximizes IoU against ``label_indices``; ties go to
    the higher score, then to the candidate whose smallest point index is
    lower. Replacement requires score >= T'_s2 and IoU >= T_IoU, both
    inclusive.
    """
    label_indices = np.unique(np.asarray(label_indices, dtype=np.int64))
    if not candidates:
        return label_indices, False

    best = None
    best_key = None
    best_iou = -1.0
    for cand in candidates:
        value = iou(label_indices, cand.indices)
        key = (value, cand.score, -int(cand.indices[0]))
        if best is None or key > best_key:
            best, best_key, best_iou = cand, key, value

    threshold = adjusted_score_threshold(cfg, instance_range)
    if best.score >= threshold and best_iou >= cfg.iou_threshold:
        return best.indices.copy(), True
    return label_indices, False
