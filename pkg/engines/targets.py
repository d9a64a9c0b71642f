"""
Ground-truth assignment: one pyramid level and one cell per box.

The level is the one whose nominal object size 4s is nearest to the box's
longer side in pixels (ties go to the finer level); the cell is the one that
contains the box centre. When two boxes claim the same cell the larger one
is kept.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from engines.backbone import STRIDES
from tools.dataset.data import BoundingBox

logger = logging.getLogger(__name__)

# keeps the inverse sigmoid finite for centres exactly on a cell edge
_EDGE = 1e-9


@dataclass
class LevelTargets:
    """Targets of one image on one level."""

    stride: int
    positive: NDArray[np.bool_]  # (H, W)
    boxes: NDArray[np.float64]  # (H, W, 4) normalized cx, cy, w, h
    classes: NDArray[np.int64]  # (H, W)

    @property
    def count(self) -> int:
        return int(self.positive.sum())


@dataclass
class BatchTargets:
    """Per level, stacked over the batch."""

    strides: tuple[int, ...]
    positive: list[NDArray[np.bool_]]  # (N, H, W)
    boxes: list[NDArray[np.float64]]  # (N, H, W, 4)
    classes: list[NDArray[np.int64]]  # (N, H, W)

    @property
    def count(self) -> int:
        return int(sum(p.sum() for p in self.positive))


def assign_level(box: BoundingBox, image_size: int, strides: Sequence[int] = STRIDES) -> int:
    longest = max(box.w, box.h) * image_size
    gaps = [abs(longest - 4 * s) for s in strides]
    return int(np.argmin(gaps))


def assign_cell(box: BoundingBox, image_size: int, stride: int) -> tuple[int, int]:
    cells = image_size // stride
    row = min(int(math.floor(box.cy * image_size / stride)), cells - 1)
    col = min(int(math.floor(box.cx * image_size / stride)), cells - 1)
    return row, col


def assign_targets(
    gt: Sequence[BoundingBox],
    image_size: int,
    strides: Sequence[int] = STRIDES,
) -> list[LevelTargets]:
    levels = []
    for stride in strides:
        cells = image_size // stride
        levels.append(
            LevelTargets(
                stride=stride,
                positive=np.zeros((cells, cells), dtype=bool),
                boxes=np.zeros((cells, cells, 4)),
                classes=np.zeros((cells, cells), dtype=np.int64),
            )
        )

    for box in gt:
        level = levels[assign_level(box, image_size, strides)]
        row, col = assign_cell(box, image_size, level.stride)
        if level.positive[row, col]:
            _, _, w, h = level.boxes[row, col]
            if w * h >= box.area:
                logger.debug("cell (%d, %d) at stride %d keeps the larger box", row, col, level.stride)
                continue
        level.positive[row, col] = True
        level.boxes[row, col] = (box.cx, box.cy, box.w, box.h)
        level.classes[row, col] = box.class_id
    return levels


def build_batch_targets(
    labels: Sequence[Sequence[BoundingBox]],
    image_size: int,
    strides: Sequence[int] = STRIDES,
) -> BatchTargets:
    per_image = [assign_targets(boxes, image_size, strides) for boxes in labels]
    return BatchTargets(
        strides=tuple(strides),
        positive=[np.stack([img[level].positive for img in per_image]) for level in range(len(strides))],
        boxes=[np.stack([img[level].boxes for img in per_image]) for level in range(len(strides))],
        classes=[np.stack([img[level].classes for img in per_image]) for level in range(len(strides))],
    )


def encode_box(box: BoundingBox, image_size: int, stride: int, cell: tuple[int, int]) -> tuple[float, float, float, float]:
    """Raw (tx, ty, tw, th) that decode maps back onto `box` at `cell`."""
    row, col = cell

    def logit(p: float) -> float:
        p = min(max(p, _EDGE), 1 - _EDGE)
        return math.log(p / (1 - p))

    tx = logit(box.cx * image_size / stride - col)
    ty = logit(box.cy * image_size / stride - row)
    tw = math.log(box.w * image_size / (4 * stride))
    th = math.log(box.h * image_size / (4 * stride))
    return tx, ty, tw, th
