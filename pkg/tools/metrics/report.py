"""
Evaluation report: precision/recall, mAP, detection accuracy accounting,
per-class and per-size-bin AP, and inference timing, as JSON or a text table.
"""

import io
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

from rich.console import Console
from rich.table import Table

from tools.dataset.data import BoundingBox, Detection, Sample, SizeBin, sample_id_type
from tools.dataset.stats import class_name, size_bin
from tools.metrics.accuracy import detection_accuracy
from tools.metrics.average_precision import (
    average_precision,
    curve_max_precision_recall,
    map_range,
    mean_ap,
)
from tools.metrics.matching import match_detections

logger = logging.getLogger(__name__)

DEFAULT_CONF_THRESHOLD = 0.25
MATCH_IOU = 0.5


@dataclass
class MetricsReport:
    precision: float
    recall: float
    map50: float
    map50_95: float
    accuracy: float
    fn_percent: float
    fp_percent: float
    per_class_ap: dict[str, Optional[float]] = field(default_factory=dict)
    per_bin_ap: dict[str, Optional[float]] = field(default_factory=dict)
    curve_max_precision: float = 0.0
    curve_max_recall: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    images: int = 0
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    ait_per_frame: Optional[float] = None

    def metrics_dict(self) -> dict[str, Any]:
        """Every deterministic field; timing is left out."""
        return {
            "precision": self.precision,
            "recall": self.recall,
            "map50": self.map50,
            "map50_95": self.map50_95,
            "accuracy": self.accuracy,
            "fn_percent": self.fn_percent,
            "fp_percent": self.fp_percent,
            "per_class_ap50": dict(self.per_class_ap),
            "per_bin_ap50": dict(self.per_bin_ap),
            "curve_max": {"precision": self.curve_max_precision, "recall": self.curve_max_recall},
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "images": self.images},
            "conf_threshold": self.conf_threshold,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": self.metrics_dict(),
            "timing": {"ait_per_frame_s": self.ait_per_frame},
        }


def _restrict_to_bin(boxes: Sequence[Any], image_size: int, bin_: SizeBin) -> list[Any]:
    return [b for b in boxes if size_bin(b.box if isinstance(b, Detection) else b, image_size) is bin_]


def evaluate(
    predictions: Mapping[sample_id_type, Sequence[Detection]],
    samples: Sequence[Sample],
    num_classes: int = 2,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> MetricsReport:
    """
    AP uses every prediction given; P/R and the accuracy triple use only
    detections at or above `conf_threshold`, matched at IoU 0.5.
    """
    dets = [list(predictions.get(sample.id, [])) for sample in samples]
    gts: list[list[BoundingBox]] = [list(sample.labels) for sample in samples]

    confident = [[d for d in image if d.confidence >= conf_threshold] for image in dets]
    matches = [match_detections(d, g, MATCH_IOU) for d, g in zip(confident, gts)]
    triple = detection_accuracy(matches)
    tp, fp, fn = triple.tp, triple.fp, triple.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0

    map50, map50_95 = map_range(dets, gts, num_classes)
    per_class = average_precision(dets, gts, MATCH_IOU, num_classes)

    per_bin: dict[str, Optional[float]] = {}
    for bin_ in SizeBin:
        bin_dets = [_restrict_to_bin(d, s.image_size, bin_) for d, s in zip(dets, samples)]
        bin_gts = [_restrict_to_bin(g, s.image_size, bin_) for g, s in zip(gts, samples)]
        if not any(bin_gts):
            per_bin[bin_.value] = None
            continue
        per_bin[bin_.value] = mean_ap(average_precision(bin_dets, bin_gts, MATCH_IOU, num_classes))

    curve_precision, curve_recall = curve_max_precision_recall(dets, gts, num_classes)
    report = MetricsReport(
        precision=precision,
        recall=recall,
        map50=map50,
        map50_95=map50_95,
        accuracy=triple.accuracy,
        fn_percent=triple.fn_percent,
        fp_percent=triple.fp_percent,
        per_class_ap={class_name(c): ap for c, ap in per_class.items()},
        per_bin_ap=per_bin,
        curve_max_precision=curve_precision,
        curve_max_recall=curve_recall,
        tp=tp,
        fp=fp,
        fn=fn,
        images=len(samples),
        conf_threshold=conf_threshold,
    )
    logger.info("evaluated %d images: mAP@0.5 %.4f, mAP@0.5:0.95 %.4f", len(samples), map50, map50_95)
    return report


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def render_table(report: MetricsReport, title: str = "Evaluation") -> str:
    """Plain-text table, columns in P, R, mAP, then accuracy / FN / FP, then timing order."""
    table = Table(title=title, show_header=True, header_style="bold")
    for column in ("P", "R", "mAP@0.5", "mAP@0.5:0.95", "Accuracy %", "FN %", "FP %", "AIT/frame (s)"):
        table.add_column(column, justify="right")
    table.add_row(
        _fmt(report.precision),
        _fmt(report.recall),
        _fmt(report.map50),
        _fmt(report.map50_95),
        _fmt(report.accuracy, 2),
        _fmt(report.fn_percent, 2),
        _fmt(report.fp_percent, 2),
        _fmt(report.ait_per_frame, 4),
    )

    breakdown = Table(title="AP@0.5 breakdown", show_header=True, header_style="bold")
    breakdown.add_column("Group", style="dim")
    breakdown.add_column("AP@0.5", justify="right")
    for name, ap in report.per_class_ap.items():
        breakdown.add_row(name, _fmt(ap))
    for name, ap in report.per_bin_ap.items():
        breakdown.add_row(name.replace("_", " "), _fmt(ap))

    buffer = io.StringIO()
    console = Console(file=buffer, width=120, color_system=None)
    console.print(table)
    console.print(breakdown)
    return buffer.getvalue()
