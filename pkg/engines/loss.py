"""
Composite detection loss.

    total = box * mean(1 - CIoU over positive cells)
          + objectness * mean(BCE over every cell of every level)
          + classification * mean(BCE over the class logits of positive cells)

With no positive cell in the batch the box and class terms are exactly 0.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from engines.detector import BOX_CHANNELS, TW_CLAMP
from engines.nn import ConfigError
from engines.targets import BatchTargets
from tools.tensor import functions
from tools.tensor.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

CIOU_EPS = 1e-9


@dataclass(frozen=True)
class LossWeights:
    box: float = 5.0
    objectness: float = 1.0
    classification: float = 0.5

    def __post_init__(self) -> None:
        if min(self.box, self.objectness, self.classification) < 0:
            raise ConfigError(f"loss weights must be non-negative: {self}")


@dataclass
class LossBreakdown:
    box_loss: Tensor
    objectness_loss: Tensor
    class_loss: Tensor
    total: Tensor
    positives: int = 0

    def as_dict(self) -> dict[str, float]:
        return {
            "box": self.box_loss.item(),
            "objectness": self.objectness_loss.item(),
            "class": self.class_loss.item(),
            "total": self.total.item(),
        }


def decode_cells(
    pred: Tensor, rows: np.ndarray, cols: np.ndarray, stride: int, image_size: int
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Differentiable decode of gathered (P, 5 + nc) predictions into normalized boxes."""
    scale = stride / image_size
    size = 4 * stride / image_size
    cx = (functions.sigmoid(pred[:, 0]) + cols.astype(pred.dtype)) * scale
    cy = (functions.sigmoid(pred[:, 1]) + rows.astype(pred.dtype)) * scale
    w = functions.exp(functions.minimum(pred[:, 2], TW_CLAMP)) * size
    h = functions.exp(functions.minimum(pred[:, 3], TW_CLAMP)) * size
    return cx, cy, w, h


def ciou(
    predicted: tuple[Tensor, Tensor, Tensor, Tensor],
    target: np.ndarray,
    eps: float = CIOU_EPS,
) -> Tensor:
    """
    Complete IoU between predicted boxes and constant (P, 4) target boxes:
    IoU - centre distance^2 / enclosing diagonal^2 - alpha * v.
    """
    px, py, pw, ph = predicted
    dtype = px.dtype
    gx, gy, gw, gh = (target[:, k].astype(dtype) for k in range(4))

    p_x1, p_x2 = px - pw * 0.5, px + pw * 0.5
    p_y1, p_y2 = py - ph * 0.5, py + ph * 0.5
    g_x1, g_x2 = gx - gw * 0.5, gx + gw * 0.5
    g_y1, g_y2 = gy - gh * 0.5, gy + gh * 0.5

    inter_w = functions.maximum(functions.minimum(p_x2, g_x2) - functions.maximum(p_x1, g_x1), 0.0)
    inter_h = functions.maximum(functions.minimum(p_y2, g_y2) - functions.maximum(p_y1, g_y1), 0.0)
    inter = inter_w * inter_h
    union = pw * ph + gw * gh - inter + eps
    overlap = inter / union

    enclose_w = functions.maximum(p_x2, g_x2) - functions.minimum(p_x1, g_x1)
    enclose_h = functions.maximum(p_y2, g_y2) - functions.minimum(p_y1, g_y1)
    diagonal = enclose_w * enclose_w + enclose_h * enclose_h + eps
    distance = (px - gx) * (px - gx) + (py - gy) * (py - gy)

    aspect = functions.atan(pw / ph) - np.arctan(gw / gh)
    v = aspect * aspect * (4.0 / math.pi**2)
    alpha = v / (1.0 - overlap + v + eps)
    return overlap - distance / diagonal - alpha * v


def _zero(dtype: Any) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def compute_loss(
    raw: Sequence[Tensor],
    targets: BatchTargets,
    image_size: int,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    if len(raw) != len(targets.strides):
        raise ShapeError(f"{len(raw)} prediction levels for {len(targets.strides)} target levels")
    dtype = raw[0].dtype

    objectness_terms = []
    cells = 0
    box_terms: list[Tensor] = []
    class_terms: list[Tensor] = []
    for level, stride, positive, boxes, classes in zip(
        raw, targets.strides, targets.positive, targets.boxes, targets.classes
    ):
        if level.shape[0] != positive.shape[0] or level.shape[2:] != positive.shape[1:]:
            raise ShapeError(f"prediction {level.shape} does not align with targets {positive.shape}")
        num_classes = level.shape[1] - BOX_CHANNELS

        bce = functions.binary_cross_entropy_with_logits(level[:, 4], positive.astype(dtype))
        objectness_terms.append(bce.sum())
        cells += positive.size

        batch, rows, cols = np.nonzero(positive)
        if batch.size == 0:
            continue
        pred = level[batch, :, rows, cols]  # (P, 5 + nc)
        decoded = decode_cells(pred, rows, cols, stride, image_size)
        box_terms.append((1.0 - ciou(decoded, boxes[batch, rows, cols])).sum())

        onehot = np.zeros((batch.size, num_classes), dtype=dtype)
        onehot[np.arange(batch.size), classes[batch, rows, cols]] = 1.0
        class_terms.append(functions.binary_cross_entropy_with_logits(pred[:, BOX_CHANNELS:], onehot).sum())

    objectness_loss = _sum(objectness_terms) / float(cells)
    positives = targets.count
    if positives:
        num_classes = raw[0].shape[1] - BOX_CHANNELS
        box_loss = _sum(box_terms) / float(positives)
        class_loss = _sum(class_terms) / float(positives * num_classes)
    else:
        box_loss, class_loss = _zero(dtype), _zero(dtype)

    total = box_loss * weights.box + objectness_loss * weights.objectness + class_loss * weights.classification
    return LossBreakdown(box_loss, objectness_loss, class_loss, total, positives)


def _sum(terms: Sequence[Tensor]) -> Tensor:
    out = terms[0]
    for term in terms[1:]:
        out = out + term
    return out
