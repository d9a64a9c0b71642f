"""
YOLO text labels: one `class_id cx cy w h` line per box, six decimals,
space-separated, newline-terminated. Blank lines are ignored on read.
"""

import logging
from pathlib import Path
from typing import Iterable, Union

from tools.dataset.data import BoundingBox, BoxError

logger = logging.getLogger(__name__)

FIELDS = 5


class LabelFormatError(ValueError):
    def __init__(self, path: Union[str, Path], line_number: int, reason: str) -> None:
        self.path = str(path)
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{self.path}:{line_number}: {reason}")


def format_label(box: BoundingBox) -> str:
    return f"{box.class_id} {box.cx:.6f} {box.cy:.6f} {box.w:.6f} {box.h:.6f}"


def write_labels(path: Union[str, Path], boxes: Iterable[BoundingBox]) -> None:
    text = "".join(format_label(box) + "\n" for box in boxes)
    Path(path).write_text(text, encoding="utf-8")


def parse_label(line: str, path: Union[str, Path], line_number: int, num_classes: int) -> BoundingBox:
    tokens = line.split()
    if len(tokens) != FIELDS:
        raise LabelFormatError(path, line_number, f"expected {FIELDS} fields, got {len(tokens)}")
    try:
        class_id = int(tokens[0])
    except ValueError:
        raise LabelFormatError(path, line_number, f"class id {tokens[0]!r} is not an integer") from None
    if not 0 <= class_id < num_classes:
        raise LabelFormatError(path, line_number, f"class id {class_id} outside [0, {num_classes - 1}]")
    try:
        cx, cy, w, h = (float(t) for t in tokens[1:])
    except ValueError:
        raise LabelFormatError(path, line_number, "coordinates must be numbers") from None
    try:
        return BoundingBox(class_id, cx, cy, w, h)
    except BoxError as exc:
        raise LabelFormatError(path, line_number, str(exc)) from None


def read_labels(path: Union[str, Path], num_classes: int = 2) -> list[BoundingBox]:
    boxes = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            boxes.append(parse_label(line, path, line_number, num_classes))
    logger.debug("read %d labels from %s", len(boxes), path)
    return boxes
