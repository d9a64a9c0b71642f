"""
COCO-style average precision.

For each class the detections of every image are ranked by confidence, the
cumulative precision/recall curve is built, precision is replaced by its
running maximum from the right (the envelope) and sampled at the 101 recall
points 0, 0.01, ..., 1. Classes without ground truth are left out of the mean.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from tools.dataset.data import BoundingBox, Detection
from tools.metrics.matching import match_detections

logger = logging.getLogger(__name__)

RECALL_POINTS = np.linspace(0.0, 1.0, 101)
IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class RankedDetections:
    """Per class: confidences and TP flags in ranking order, plus the GT count."""

    confidences: np.ndarray
    true_positive: np.ndarray
    num_gt: int


def rank_detections(
    predictions: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[BoundingBox]],
    class_id: int,
    iou_threshold: float,
) -> RankedDetections:
    confidences: list[float] = []
    flags: list[bool] = []
    num_gt = 0
    for dets, gts in zip(predictions, ground_truth, strict=True):
        class_dets = [d for d in dets if d.class_id == class_id]
        class_gts = [g for g in gts if g.class_id == class_id]
        num_gt += len(class_gts)
        match = match_detections(class_dets, class_gts, iou_threshold)
        confidences.extend(d.confidence for d in match.ordered)
        flags.extend(m >= 0 for m in match.matched)
    order = np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")
    return RankedDetections(
        confidences=np.asarray(confidences, dtype=np.float64)[order],
        true_positive=np.asarray(flags, dtype=bool)[order],
        num_gt=num_gt,
    )


def precision_recall(ranked: RankedDetections) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(ranked.true_positive, dtype=np.float64)
    fp = np.cumsum(~ranked.true_positive, dtype=np.float64)
    recall = tp / max(ranked.num_gt, 1)
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return precision, recall


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    if precision.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    positions = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.zeros(RECALL_POINTS.size)
    inside = positions < envelope.size
    sampled[inside] = envelope[positions[inside]]
    return float(np.mean(sampled))


def average_precision(
    predictions: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[BoundingBox]],
    iou_threshold: float,
    num_classes: int,
) -> dict[int, Optional[float]]:
    """AP per class id; None for a class with no ground truth."""
    result: dict[int, Optional[float]] = {}
    for class_id in range(num_classes):
        ranked = rank_detections(predictions, ground_truth, class_id, iou_threshold)
        if ranked.num_gt == 0:
            result[class_id] = None
            continue
        result[class_id] = interpolated_ap(*precision_recall(ranked))
    return result


def mean_ap(per_class: Mapping[int, Optional[float]]) -> float:
    values = [ap for ap in per_class.values() if ap is not None]
    if not values:
        logger.warning("no class has ground truth; mAP reported as 0")
        return 0.0
    return float(np.mean(values))


def map_range(
    predictions: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[BoundingBox]],
    num_classes: int,
    thresholds: Sequence[float] = IOU_THRESHOLDS,
) -> tuple[float, float]:
    """(mAP at the first threshold, mean mAP over all thresholds)."""
    per_threshold = [
        mean_ap(average_precision(predictions, ground_truth, t, num_classes)) for t in thresholds
    ]
    return per_threshold[0], float(np.mean(per_threshold))


def curve_max_precision_recall(
    predictions: Sequence[Sequence[Detection]],
    ground_truth: Sequence[Sequence[BoundingBox]],
    num_classes: int,
    iou_threshold: float = 0.5,
) -> tuple[float, float]:
    """Precision and recall at the maximum-F1 point of the all-class curve."""
    ranked = [rank_detections(predictions, ground_truth, c, iou_threshold) for c in range(num_classes)]
    merged = RankedDetections(
        confidences=np.concatenate([r.confidences for r in ranked]),
        true_positive=np.concatenate([r.true_positive for r in ranked]),
        num_gt=sum(r.num_gt for r in ranked),
    )
    order = np.argsort(-merged.confidences, kind="stable")
    merged.true_positive = merged.true_positive[order]
    if merged.true_positive.size == 0 or merged.num_gt == 0:
        return 0.0, 0.0
    precision, recall = precision_recall(merged)
    f1 = 2 * precision * recall / np.maximum(precision + recall, np.finfo(np.float64).eps)
    best = int(np.argmax(f1))
    return float(precision[best]), float(recall[best])
