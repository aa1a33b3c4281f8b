"""
Segmentation and detection metrics.

- ``iou`` pools pixel counts over the whole batch;
- ``niou`` averages the per-sample IoU so that every image counts equally,
  which keeps a few large targets from dominating the score;
- ``roc_sweep`` traces probability of detection against false-alarm rate
  over a sliding threshold.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import ndimage

from .config import thread_count
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SampleCounts:
    """Pixel tallies of one prediction against its ground truth."""

    tp: int
    t: int
    p: int

    def __post_init__(self):
        if min(self.tp, self.t, self.p) < 0 or self.tp > min(self.t, self.p):
            raise InvalidArgumentError(f"Inconsistent counts tp={self.tp}, t={self.t}, p={self.p}")

    @property
    def union(self) -> int:
        return self.t + self.p - self.tp

    def iou(self, empty_score: float = 1.0) -> float:
        return self.tp / self.union if self.union else empty_score


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    pd: float
    fa: float


def _check_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"Prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def sample_counts(pred, gt) -> SampleCounts:
    """
    Pixel tallies of one binary prediction against its ground truth.

    Args:
        pred: Predicted mask; any truthy dtype.
        gt: Ground-truth mask of the same shape.

    Returns:
        SampleCounts: Overlap ``tp``, target pixels ``t`` and predicted pixels ``p``.
    """
    pred, gt = _check_pair(pred, gt)
    return SampleCounts(tp=int((pred & gt).sum()), t=int(gt.sum()), p=int(pred.sum()))


def iou(counts: Sequence[SampleCounts], empty_score: float = 1.0) -> float:
    """Batch IoU ``sum(TP) / sum(T + P - TP)``."""
    if not counts:
        raise InvalidArgumentError("IoU of an empty batch is undefined")
    union = sum(c.union for c in counts)
    return sum(c.tp for c in counts) / union if union else empty_score


def niou(counts: Sequence[SampleCounts], empty_score: float = 1.0) -> float:
    """
    Normalized IoU: the mean of per-sample IoU.

    Args:
        counts: One entry per image.
        empty_score: Score of a sample with no target and no prediction.
    """
    if not counts:
        raise InvalidArgumentError("nIoU of an empty batch is undefined")
    return float(np.mean([c.iou(empty_score) for c in counts]))


@dataclass
class MetricReport:
    iou: float
    niou: float
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"iou": self.iou, "niou": self.niou, "per_sample": self.per_sample}


def evaluate_masks(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    stems: Sequence[str] | None = None,
    empty_score: float = 1.0,
) -> MetricReport:
    """IoU, nIoU and per-sample tallies for aligned prediction/ground-truth lists."""
    if len(preds) != len(gts):
        raise InvalidArgumentError(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    stems = list(stems) if stems is not None else [str(i) for i in range(len(preds))]
    counts = [sample_counts(p, g) for p, g in zip(preds, gts)]
    per_sample = [
        {"stem": stem, "tp": c.tp, "t": c.t, "p": c.p, "iou": c.iou(empty_score)}
        for stem, c in zip(stems, counts)
    ]
    return MetricReport(iou(counts, empty_score), niou(counts, empty_score), per_sample)


def default_thresholds(maps: Sequence[np.ndarray], count: int = 50) -> list[float]:
    """
    ``count`` strictly descending thresholds spanning the saliency range.

    The first equals the global maximum (nothing predicted under the strict
    ``>`` rule) and the last lies just below the global minimum (everything
    predicted).
    """
    if count < 2:
        raise InvalidArgumentError(f"Need at least 2 thresholds, got {count}")
    if not maps:
        raise InvalidArgumentError("No saliency maps given")
    high = max(float(np.max(m)) for m in maps)
    low = float(np.nextafter(min(float(np.min(m)) for m in maps), -np.inf))
    if high <= low:
        return [high, low]
    return [float(t) for t in np.unique(np.linspace(high, low, count))[::-1]]


def _label_targets(gt: np.ndarray) -> tuple[np.ndarray, int]:
    labels, count = ndimage.label(gt, structure=EIGHT_CONNECTED)
    return labels, count


def roc_sweep(
    saliency_maps: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    thresholds: Sequence[float],
    workers: int | None = None,
) -> list[RocPoint]:
    """
    Detection and false-alarm rates over a descending threshold sweep.

    At threshold ``t`` a pixel is predicted when its saliency is strictly
    above ``t``. A ground-truth target (an 8-connected component) is
    detected when any predicted pixel falls inside it. ``pd`` is detected
    over total targets and ``fa`` is predicted pixels outside the ground
    truth over total pixels, both pooled over the batch.

    Args:
        saliency_maps: One map per image.
        gt_masks: Matching ground-truth masks.
        thresholds: Strictly descending thresholds.
        workers: Threads evaluating thresholds in parallel.

    Returns:
        list[RocPoint]: One point per threshold, in sweep order.
    """
    if len(saliency_maps) != len(gt_masks) or not saliency_maps:
        raise InvalidArgumentError(
            f"Need matching nonempty lists, got {len(saliency_maps)} maps and {len(gt_masks)} masks"
        )
    thresholds = [float(t) for t in thresholds]
    if not thresholds or any(b >= a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidArgumentError("Thresholds must be a nonempty, strictly descending list")

    samples = []
    for saliency, gt in zip(saliency_maps, gt_masks):
        saliency = np.asarray(saliency, dtype=np.float64)
        gt = np.asarray(gt).astype(bool)
        if saliency.shape != gt.shape:
            raise InvalidArgumentError(f"Saliency {saliency.shape} and mask {gt.shape} differ in shape")
        labels, count = _label_targets(gt)
        samples.append((saliency, gt, labels, count))

    total_targets = sum(s[3] for s in samples)
    if total_targets == 0:
        raise InvalidArgumentError("ROC needs at least one ground-truth target in the batch")
    total_pixels = sum(s[0].size for s in samples)

    def point(threshold: float) -> RocPoint:
        detected = 0
        false_pixels = 0
        for saliency, gt, labels, count in samples:
            pred = saliency > threshold
            hits = np.bincount(labels[pred], minlength=count + 1)[1:]
            detected += int(np.count_nonzero(hits))
            false_pixels += int((pred & ~gt).sum())
        return RocPoint(threshold, detected / total_targets, false_pixels / total_pixels)

    workers = workers or thread_count()
    if workers == 1:
        points = [point(t) for t in thresholds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(point, thresholds))
    logger.info(f"ROC sweep over {len(thresholds)} thresholds, {total_targets} targets")
    return points


def roc_frame(points: Sequence[RocPoint]) -> pd.DataFrame:
    """
    ROC points as a table.

    Args:
        points: Output of ``roc_sweep``.

    Returns:
        pd.DataFrame: Columns ``threshold``, ``fa`` and ``pd``, one row per point in sweep order.
    """
    return pd.DataFrame(
        {
            "threshold": [p.threshold for p in points],
            "fa": [p.fa for p in points],
            "pd": [p.pd for p in points],
        }
    )


def write_roc_csv(points: Sequence[RocPoint], path: str | Path) -> None:
    """Write points as CSV with header ``threshold,fa,pd``."""
    roc_frame(points).to_csv(path, index=False)


def pd_at_fa(points: Sequence[RocPoint], fa_max: float) -> float:
    """Best detection rate among points whose false-alarm rate is at most ``fa_max``."""
    eligible = [p.pd for p in points if p.fa <= fa_max]
    return max(eligible, default=0.0)
