from dataclasses import dataclass, field
from typing import Sequence

from tools.dataset.data import BoundingBox, Detection
from tools.metrics.boxes import iou


@dataclass
class MatchResult:
    """
    Outcome of matching one image's detections against its ground truth.

    `matched` is parallel to the detections in descending-confidence order and
    holds the index of the matched ground truth, or -1 for a false positive.
    """

    iou_threshold: float
    true_positives: list[tuple[Detection, BoundingBox]] = field(default_factory=list)
    false_positives: list[Detection] = field(default_factory=list)
    false_negatives: list[BoundingBox] = field(default_factory=list)
    ordered: list[Detection] = field(default_factory=list)
    matched: list[int] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.true_positives)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)


def sort_by_confidence(dets: Sequence[Detection]) -> list[Detection]:
    """Descending confidence; equal confidences keep their input order."""
    return sorted(dets, key=lambda d: -d.confidence)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[BoundingBox],
    iou_threshold: float = 0.5,
    class_aware: bool = True,
) -> MatchResult:
    """
    Greedy one-to-one matching. Each detection, highest confidence first, takes
    the unmatched ground truth with the highest IoU >= threshold (earliest on ties).
    """
    result = MatchResult(iou_threshold=iou_threshold)
    taken = [False] * len(gts)
    for det in sort_by_confidence(dets):
        best, best_iou = -1, -1.0
        for index, gt in enumerate(gts):
            if taken[index] or (class_aware and gt.class_id != det.class_id):
                continue
            overlap = iou(det.box, gt)
            if overlap >= iou_threshold and overlap > best_iou:
                best, best_iou = index, overlap
        result.ordered.append(det)
        result.matched.append(best)
        if best < 0:
            result.false_positives.append(det)
        else:
            taken[best] = True
            result.true_positives.append((det, gts[best]))
    result.false_negatives = [gt for gt, used in zip(gts, taken) if not used]
    return result
