import logging
from typing import Sequence, Union

import numpy as np

from engines.backbone import STRIDES
from engines.detector import BOX_CHANNELS, TW_CLAMP, Detector
from tools.dataset.data import BoundingBox, Detection, Sample, sample_id_type
from tools.metrics.boxes import iou
from tools.tensor.ops import to_tensor
from tools.tensor.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

MAX_DETECTIONS = 300

Level = Union[Tensor, np.ndarray]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_array(level: Level) -> np.ndarray:
    data = level.data if isinstance(level, Tensor) else np.asarray(level)
    if data.ndim != 4 or data.shape[1] <= BOX_CHANNELS:
        raise ShapeError(f"expected raw predictions (N, 5 + classes, H, W), got {data.shape}")
    return data.astype(np.float64)


def decode_level(data: np.ndarray, stride: int, image_size: int, conf_threshold: float) -> list[Detection]:
    """Detections of one image (C, H, W) on one level, in row-major cell order."""
    _, height, width = data.shape
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    objectness = _sigmoid(data[4])
    class_prob = _sigmoid(data[BOX_CHANNELS:])
    class_ids = np.argmax(class_prob, axis=0)
    confidence = objectness * np.max(class_prob, axis=0)

    cx = (cols + _sigmoid(data[0])) * stride / image_size
    cy = (rows + _sigmoid(data[1])) * stride / image_size
    w = np.exp(np.minimum(data[2], TW_CLAMP)) * 4 * stride / image_size
    h = np.exp(np.minimum(data[3], TW_CLAMP)) * 4 * stride / image_size

    x1 = np.clip(cx - w / 2, 0.0, 1.0)
    x2 = np.clip(cx + w / 2, 0.0, 1.0)
    y1 = np.clip(cy - h / 2, 0.0, 1.0)
    y2 = np.clip(cy + h / 2, 0.0, 1.0)

    detections = []
    for i, j in zip(*np.nonzero(confidence >= conf_threshold)):
        if x2[i, j] <= x1[i, j] or y2[i, j] <= y1[i, j]:
            continue
        box = BoundingBox.from_corners(
            int(class_ids[i, j]), float(x1[i, j]), float(y1[i, j]), float(x2[i, j]), float(y2[i, j])
        )
        detections.append(Detection(box, float(np.clip(confidence[i, j], 0.0, 1.0))))
    return detections


def decode(
    raw: Sequence[Level],
    conf_threshold: float,
    strides: Sequence[int] = STRIDES,
) -> list[list[Detection]]:
    """
    Turn raw per-level predictions into detections, one list per image.

    The image size is recovered from the finest level's grid and stride.
    Detections with confidence below `conf_threshold` are dropped.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError(f"conf_threshold must be in [0, 1], got {conf_threshold}")
    levels = [_as_array(level) for level in raw]
    image_size = levels[0].shape[-1] * strides[0]
    batch = levels[0].shape[0]
    out: list[list[Detection]] = [[] for _ in range(batch)]
    for data, stride in zip(levels, strides):
        if data.shape[-1] * stride != image_size:
            raise ShapeError(f"level {data.shape} is inconsistent with image size {image_size}")
        # a product of sigmoids is below 1 even where float64 rounds it up to 1
        if conf_threshold >= 1.0:
            continue
        for n in range(batch):
            out[n].extend(decode_level(data[n], stride, image_size, conf_threshold))
    return out


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy same-class suppression in descending confidence; ties keep input order."""
    order = sorted(range(len(dets)), key=lambda k: -dets[k].confidence)
    kept: list[Detection] = []
    for k in order:
        candidate = dets[k]
        if all(
            other.class_id != candidate.class_id or iou(other.box, candidate.box) < iou_threshold
            for other in kept
        ):
            kept.append(candidate)
    return kept


def postprocess(
    raw: Sequence[Level],
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.5,
    max_detections: int = MAX_DETECTIONS,
) -> list[list[Detection]]:
    results = []
    for detections in decode(raw, conf_threshold):
        kept = nms(detections, iou_threshold)[:max_detections]
        logger.debug("kept %d of %d decoded detections", len(kept), len(detections))
        results.append(kept)
    return results


def predict(
    model: Detector,
    samples: Sequence[Sample],
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.5,
    batch_size: int = 16,
) -> dict[sample_id_type, list[Detection]]:
    """Detections per sample id. Runs without a tape, so nothing is recorded."""
    predictions: dict[sample_id_type, list[Detection]] = {}
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size]
        images = to_tensor([sample.image for sample in batch], dtype=model.dtype)
        for sample, detections in zip(batch, postprocess(model(images), conf_threshold, iou_threshold)):
            predictions[sample.id] = detections
    return predictions
