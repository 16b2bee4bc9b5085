"""Threshold-sweep evaluation: precision/recall, mAP, TTA and ATTA.

Counting is per frame: every frame of a positive video whose probability
clears the threshold is a true positive, every frame below it a false
negative, and symmetrically for negative videos. "Above a threshold" is
implemented as >=. The sweep visits every distinct probability plus the
sentinels 0 and 1+eps, so the curve is exact for the given scores.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

UPPER_SENTINEL_EPS = 1e-6


class UndefinedMetricError(ValueError):
    """Metric has no defined value for this score set."""


@dataclass
class VideoScore:
    """Per-frame accident probabilities for one video plus its label."""

    probs: np.ndarray
    positive: bool
    tau: float = math.inf
    fps: float = 20.0
    video_id: str = ""

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1:
            raise ValueError(f"probs must be 1-D, got shape {self.probs.shape}")
        if self.probs.size and (self.probs.min() < 0 or self.probs.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.positive and not math.isfinite(self.tau):
            raise ValueError("positive video needs a finite tau")


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int


def confusion_at(scores: list[VideoScore], beta: float) -> ConfusionCounts:
    """Frame-level confusion counts at one threshold (crossing is >=)."""
    tp = fp = tn = fn = 0
    for s in scores:
        above = int(np.count_nonzero(s.probs >= beta))
        below = s.probs.size - above
        if s.positive:
            tp += above
            fn += below
        else:
            fp += above
            tn += below
    return ConfusionCounts(tp, fp, tn, fn)


def precision_recall(counts: ConfusionCounts) -> tuple[float, float]:
    """Precision and recall with the empty-denominator conventions P=1, R=0."""
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 1.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return p, r


def tta_at(scores: list[VideoScore], beta: float) -> float:
    """Mean seconds-to-accident over positive videos at one threshold.

    Per video: the first frame (1-based) whose probability reaches beta
    marks the anticipation; the value is (tau - first)/fps clamped at 0.
    Videos that never cross contribute 0.
    """
    ttas = []
    for s in scores:
        if not s.positive:
            continue
        hits = np.nonzero(s.probs >= beta)[0]
        if hits.size == 0:
            ttas.append(0.0)
        else:
            first = int(hits[0]) + 1
            ttas.append(max(0.0, s.tau - first) / s.fps)
    if not ttas:
        raise UndefinedMetricError("no positive videos")
    return float(np.mean(ttas))


@dataclass
class PRCurve:
    """Sweep samples (thresholds strictly decreasing) plus scalar summaries."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    mean_tta: np.ndarray
    map: float
    atta: float


def _threshold_grid(scores: list[VideoScore]) -> np.ndarray:
    values = np.unique(np.concatenate([s.probs for s in scores]))
    grid = np.unique(np.concatenate([values, [0.0, 1.0 + UPPER_SENTINEL_EPS]]))
    return grid[::-1]


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the PR points using right-continuous interpolated precision.

    Points must be ordered by non-decreasing recall; precision at recall r
    is taken as max(P at recall >= r).
    """
    p_interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    area = 0.0
    for p, r in zip(p_interp, recall):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def trapezoid_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """Raw trapezoid integration of the PR points (sensitivity-check mode)."""
    return float(np.trapezoid(precision, recall))


def sweep(scores: list[VideoScore], ap_mode: str = "interp") -> PRCurve:
    """Evaluate the full threshold sweep and both scalar summaries."""
    if not any(s.positive and s.probs.size for s in scores):
        raise UndefinedMetricError("scores contain no positive frames")
    if ap_mode not in ("interp", "trapezoid"):
        raise ValueError(f"unknown ap_mode {ap_mode!r}")
    thresholds = _threshold_grid(scores)
    precision = np.empty(thresholds.size)
    recall = np.empty(thresholds.size)
    mean_tta = np.empty(thresholds.size)
    for i, beta in enumerate(thresholds):
        counts = confusion_at(scores, beta)
        precision[i], recall[i] = precision_recall(counts)
        mean_tta[i] = tta_at(scores, beta)
    ap_fn = interpolated_ap if ap_mode == "interp" else trapezoid_ap
    return PRCurve(
        thresholds=thresholds,
        precision=precision,
        recall=recall,
        mean_tta=mean_tta,
        map=ap_fn(precision, recall),
        atta=float(np.mean(mean_tta)),
    )


def mean_average_precision(scores: list[VideoScore], ap_mode: str = "interp") -> float:
    return sweep(scores, ap_mode).map


def average_tta(scores: list[VideoScore]) -> float:
    """Mean of the per-threshold TTA over the same grid the sweep uses."""
    return sweep(scores).atta


def export_pr_curve(curve: PRCurve, path: str | Path) -> None:
    """CSV with one row per threshold plus a trailing summary row.

    Floats are written with repr so a round-trip parse is exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "mean_tta"])
        for row in zip(curve.thresholds, curve.precision, curve.recall, curve.mean_tta):
            writer.writerow([repr(float(v)) for v in row])
        writer.writerow(["summary", repr(curve.map), "", repr(curve.atta)])


def read_pr_curve(path: str | Path) -> PRCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["threshold", "precision", "recall", "mean_tta"]:
        raise ValueError(f"{path}: not a PR-curve CSV")
    body = [r for r in rows[1:] if r and r[0] != "summary"]
    summary = next(r for r in rows[1:] if r and r[0] == "summary")
    data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    return PRCurve(
        thresholds=data[:, 0], precision=data[:, 1],
        recall=data[:, 2], mean_tta=data[:, 3],
        map=float(summary[1]), atta=float(summary[3]),
    )
