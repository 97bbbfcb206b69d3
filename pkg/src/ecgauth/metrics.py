"""Verification error metrics over genuine and impostor score sets.

The acceptance rule everywhere is ``score >= threshold`` (ties accept).
EER is located by sweeping all distinct scores plus their midpoints and
linearly interpolating FAR and FRR at the sign change of their difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Genuine and impostor scores for one target (higher = more genuine)."""

    genuine: np.ndarray
    impostor: np.ndarray
    target: str | None = None
    condition: tuple[str, str] | None = None

    def __post_init__(self):
        for name in ("genuine", "impostor"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} scores must be a non-empty 1-D sequence")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} scores contain non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def far_frr(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    """FAR = fraction of impostor scores >= threshold; FRR = genuine < threshold."""
    far = float(np.mean(scores.impostor >= threshold))
    frr = float(np.mean(scores.genuine < threshold))
    return far, frr


def _candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    values = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    if values.size == 1:
        return np.array([values[0], values[0] + 1.0])
    midpoints = 0.5 * (values[:-1] + values[1:])
    return np.sort(np.concatenate([values, midpoints, [values[-1] + 1.0]]))


def _sweep(scores: ScoreSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    imp = np.sort(scores.impostor)
    gen = np.sort(scores.genuine)
    # count ratios, not 1-x, so equal rates compare exactly equal
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    frr = np.searchsorted(gen, thresholds, side="left") / gen.size
    return far, frr


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its operating threshold.

    Returns the linear interpolation of FAR and FRR at the first sign change
    of their difference along the threshold sweep.  The reported operating
    point satisfies |FAR - FRR| <= 1 / min(n_genuine, n_impostor).
    """
    thresholds = _candidate_thresholds(scores)
    far, frr = _sweep(scores, thresholds)
    diff = far - frr
    crossing = np.nonzero(diff <= 0.0)[0]
    j = int(crossing[0])  # diff starts at +1 and ends at -1, so j exists and j > 0
    if diff[j] == 0.0:
        return float(0.5 * (far[j] + frr[j])), float(thresholds[j])
    s = diff[j - 1] / (diff[j - 1] - diff[j])
    threshold = thresholds[j - 1] + s * (thresholds[j] - thresholds[j - 1])
    eer = far[j - 1] + s * (far[j] - far[j - 1])
    return float(eer), float(threshold)


def compute_hter(scores: ScoreSet, fixed_threshold: float) -> float:
    """Half total error rate (FAR + FRR) / 2 at a predefined threshold."""
    far, frr = far_frr(scores, fixed_threshold)
    return 0.5 * (far + frr)
