"""Otsu thresholding of scores in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DEFAULT_BINS", "DegenerateScoresError", "ScoreHistogram", "score_histogram",
           "between_class_variance", "otsu_threshold", "decide"]

DEFAULT_BINS = 100


class DegenerateScoresError(ValueError):
    """Scores carry no two-class structure (fewer than 2 values, or all equal)."""


@dataclass(frozen=True, eq=False)
class ScoreHistogram:
    """Counts over ``B`` equal bins on [0, 1]; bin ``b`` is ``[b/B, (b+1)/B)``, last bin closed."""

    bins: np.ndarray
    total: int

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    def edges(self) -> np.ndarray:
        return np.arange(self.n_bins + 1) / self.n_bins


def score_histogram(scores, bins: int = DEFAULT_BINS) -> ScoreHistogram:
    s = np.asarray(scores, dtype=float)
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise ValueError("scores must lie in [0, 1]")
    # compare against the same edge values the decision rule uses
    edges = np.arange(bins + 1) / bins
    idx = np.minimum(np.searchsorted(edges, s, side="right") - 1, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return ScoreHistogram(counts, int(counts.sum()))


def between_class_variance(hist: ScoreHistogram) -> np.ndarray:
    """``w0 * w1 * (mu0 - mu1)**2`` for splitting before each bin ``b = 1..B-1``.

    Entry ``b - 1`` corresponds to the threshold ``b / B``; class means use
    bin centers. Splits with an empty side score 0.
    """
    B = hist.n_bins
    p = hist.bins / hist.total
    centers = (np.arange(B) + 0.5) / B
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * centers)[:-1]
    w1 = 1.0 - w0
    mT = float(np.sum(p * centers))
    m1 = mT - m0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = w0 * w1 * (m0 / w0 - m1 / w1) ** 2
    return np.where((w0 > 0) & (w1 > 0), var, 0.0)


def otsu_threshold(scores, bins: int = DEFAULT_BINS) -> float:
    """Bin boundary maximizing the between-class variance; lowest on ties.

    Accept a score ``s`` iff ``s >= threshold``.
    """
    s = np.asarray(scores, dtype=float)
    if len(s) < 2:
        raise DegenerateScoresError("need at least 2 scores")
    if np.all(s == s[0]):
        raise DegenerateScoresError("all scores are identical")
    hist = score_histogram(s, bins)
    var = between_class_variance(hist)
    if not np.any(var > 0):
        raise DegenerateScoresError("all scores fall into a single bin")
    b = int(np.argmax(var)) + 1
    return b / bins


def decide(scores, bins: int = DEFAULT_BINS, on_degenerate: str = "none") -> tuple[np.ndarray, float]:
    """Accept mask and threshold; ``on_degenerate`` is ``"none"`` or ``"all"``.

    A degenerate score set yields threshold ``nan`` and an all-False (or
    all-True) mask instead of raising.
    """
    s = np.asarray(scores, dtype=float)
    try:
        t = otsu_threshold(s, bins)
    except DegenerateScoresError:
        if on_degenerate not in ("none", "all"):
            raise ValueError("on_degenerate must be 'none' or 'all'") from None
        return np.full(len(s), on_degenerate == "all"), float("nan")
    return s >= t, t
