from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NewType

import numpy as np
from numpy.typing import NDArray

sample_id_type = NewType("sample_id_type", str)

CLASS_NAMES: tuple[str, ...] = ("drone", "bird")
DRONE = 0
BIRD = 1


class BoxError(ValueError):
    """Raised when box coordinates fall outside the normalized image."""


@dataclass(frozen=True)
class BoundingBox:
    """Class-labeled box in normalized (cx, cy, w, h) image coordinates."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise BoxError(f"class id must be non-negative, got {self.class_id}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise BoxError(f"centre ({self.cx}, {self.cy}) outside [0, 1]")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise BoxError(f"size ({self.w}, {self.h}) outside (0, 1]")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2)"""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def pixel_size(self, image_size: int) -> tuple[float, float]:
        # rounding keeps exact edges like 32 px from drifting across a bin boundary
        return round(self.w * image_size, 6), round(self.h * image_size, 6)

    @classmethod
    def from_corners(cls, class_id: int, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise BoxError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def class_id(self) -> int:
        return self.box.class_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "class_id": self.box.class_id,
            "cx": self.box.cx,
            "cy": self.box.cy,
            "w": self.box.w,
            "h": self.box.h,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> "Detection":
        box = BoundingBox(int(record["class_id"]), record["cx"], record["cy"], record["w"], record["h"])
        return cls(box, float(record["confidence"]))


class SizeBin(str, Enum):
    EXTREMELY_SMALL = "extremely_small"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


@dataclass
class Sample:
    """
    One image and its ground truth.

    image is a (C, H, W) float array in [0, 1] holding 8-bit levels (k / 255).
    """

    id: sample_id_type
    image: NDArray[np.floating[Any]]
    labels: list[BoundingBox] = field(default_factory=list)

    @property
    def image_size(self) -> int:
        return int(self.image.shape[-1])

    @property
    def channels(self) -> int:
        return int(self.image.shape[0])
