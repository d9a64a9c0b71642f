import logging
from dataclasses import dataclass
from typing import Sequence

from tools.metrics.matching import MatchResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AccuracyTriple:
    """Percentages of TP, FN and FP over T = TP + FN + FP; they sum to 100."""

    accuracy: float
    fn_percent: float
    fp_percent: float
    tp: int = 0
    fn: int = 0
    fp: int = 0


def detection_accuracy(matches: Sequence[MatchResult]) -> AccuracyTriple:
    tp = sum(m.tp for m in matches)
    fn = sum(m.fn for m in matches)
    fp = sum(m.fp for m in matches)
    total = tp + fn + fp
    if total == 0:
        logger.warning("no detections and no ground truth; accuracy defined as 100%")
        return AccuracyTriple(100.0, 0.0, 0.0)
    fn_percent = 100.0 * fn / total
    fp_percent = 100.0 * fp / total
    return AccuracyTriple(100.0 * tp / total, fn_percent, fp_percent, tp, fn, fp)
