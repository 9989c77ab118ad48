"""Confidence trimaps from base-model logits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import as_logits, as_trimap, sigmoid_map

BACKGROUND, UNKNOWN, FOREGROUND = 0, 128, 255


@dataclass(frozen=True)
class ThresholdPair:
    t_low: float = 0.05
    t_high: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.t_low < self.t_high < 1.0):
            raise ValueError(
                f"thresholds must satisfy 0 < t_low < t_high < 1, got ({self.t_low}, {self.t_high})"
            )


DEFAULT_THRESHOLDS = ThresholdPair()

# low/high pairs of the refinement ablation, narrowest band first
ABLATION_THRESHOLDS = (
    ThresholdPair(0.45, 0.55),
    ThresholdPair(0.35, 0.65),
    ThresholdPair(0.25, 0.75),
    ThresholdPair(0.15, 0.85),
    ThresholdPair(0.05, 0.95),
    ThresholdPair(0.01, 0.99),
    ThresholdPair(0.005, 0.995),
)


@dataclass(frozen=True)
class RegionFractions:
    background: float
    unknown: float
    foreground: float


def trimap_from_prob(prob: np.ndarray, th: ThresholdPair = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Three-way split of an already-sigmoided confidence map."""
    m = np.asarray(prob, dtype=np.float64)
    t = np.full(m.shape, UNKNOWN, dtype=np.uint8)
    t[m <= th.t_low] = BACKGROUND
    # the high test wins, matching the if / else-if order
    t[m >= th.t_high] = FOREGROUND
    return as_trimap(t)


def generate_trimap(p, th: ThresholdPair = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Trimap from logits: sigma(p) >= t_high -> 255, sigma(p) <= t_low -> 0, else 128."""
    return trimap_from_prob(sigmoid_map(as_logits(p)), th)


def region_fractions(t) -> RegionFractions:
    t = as_trimap(t)
    n = t.size
    bg = int(np.count_nonzero(t == BACKGROUND))
    fg = int(np.count_nonzero(t == FOREGROUND))
    unk = n - bg - fg
    return RegionFractions(bg / n, unk / n, fg / n)
