import math

import numpy as np
import pytest

from engines.loss import CIOU_EPS, LossWeights, ciou, compute_loss, decode_cells
from engines.nn import ConfigError
from engines.targets import assign_cell, assign_level, build_batch_targets, encode_box
from tools.dataset.data import BIRD, DRONE, BoundingBox
from tools.tensor.gradcheck import grad_check
from tools.tensor.tensor import Tape, Tensor

STRIDES = (8, 16, 32)


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def bce(logit: float, target: float) -> float:
    return max(logit, 0.0) - logit * target + math.log1p(math.exp(-abs(logit)))


def scalar_ciou(p: tuple[float, ...], g: tuple[float, ...]) -> float:
    px, py, pw, ph = p
    gx, gy, gw, gh = g
    inter_w = max(min(px + pw / 2, gx + gw / 2) - max(px - pw / 2, gx - gw / 2), 0.0)
    inter_h = max(min(py + ph / 2, gy + gh / 2) - max(py - ph / 2, gy - gh / 2), 0.0)
    inter = inter_w * inter_h
    overlap = inter / (pw * ph + gw * gh - inter + CIOU_EPS)
    enclose_w = max(px + pw / 2, gx + gw / 2) - min(px - pw / 2, gx - gw / 2)
    enclose_h = max(py + ph / 2, gy + gh / 2) - min(py - ph / 2, gy - gh / 2)
    diagonal = enclose_w**2 + enclose_h**2 + CIOU_EPS
    distance = (px - gx) ** 2 + (py - gy) ** 2
    v = 4.0 / math.pi**2 * (math.atan(pw / ph) - math.atan(gw / gh)) ** 2
    alpha = v / (1.0 - overlap + v + CIOU_EPS)
    return overlap - distance / diagonal - alpha * v


def scalar_loss(raw: list[np.ndarray], labels: list[list[BoundingBox]], image_size: int) -> float:
    """Cell-by-cell loop over the same definition."""
    targets = build_batch_targets(labels, image_size)
    num_classes = raw[0].shape[1] - 5
    box_sum = cls_sum = obj_sum = 0.0
    cells = positives = 0
    for level, stride, positive, boxes, classes in zip(raw, STRIDES, targets.positive, targets.boxes, targets.classes):
        n_images, _, height, width = level.shape
        for n in range(n_images):
            for i in range(height):
                for j in range(width):
                    pred = level[n, :, i, j]
                    is_positive = bool(positive[n, i, j])
                    obj_sum += bce(pred[4], 1.0 if is_positive else 0.0)
                    cells += 1
                    if not is_positive:
                        continue
                    positives += 1
                    decoded = (
                        (j + sigmoid(pred[0])) * stride / image_size,
                        (i + sigmoid(pred[1])) * stride / image_size,
                        math.exp(min(pred[2], 4.0)) * 4 * stride / image_size,
                        math.exp(min(pred[3], 4.0)) * 4 * stride / image_size,
                    )
                    box_sum += 1.0 - scalar_ciou(decoded, tuple(boxes[n, i, j]))
                    for c in range(num_classes):
                        cls_sum += bce(pred[5 + c], 1.0 if c == classes[n, i, j] else 0.0)
    box = box_sum / positives if positives else 0.0
    cls = cls_sum / (positives * num_classes) if positives else 0.0
    return 5.0 * box + 1.0 * (obj_sum / cells) + 0.5 * cls


def random_raw(rng: np.random.Generator, batch: int, image_size: int, scale: float = 1.0) -> list[np.ndarray]:
    return [rng.normal(scale=scale, size=(batch, 7, image_size // s, image_size // s)) for s in STRIDES]


LABELS = [
    [BoundingBox(DRONE, 0.3, 0.35, 0.1, 0.12), BoundingBox(BIRD, 0.7, 0.6, 0.5, 0.4)],
    [BoundingBox(BIRD, 0.2, 0.8, 0.2, 0.15)],
]


def test_matches_scalar_reference(rng):
    image_size = 64
    raw = random_raw(rng, 2, image_size)
    breakdown = compute_loss([Tensor(r) for r in raw], build_batch_targets(LABELS, image_size), image_size)
    assert breakdown.positives == 3
    assert abs(breakdown.total.item() - scalar_loss(raw, LABELS, image_size)) < 1e-10


def test_empty_image_objectness_is_ln2():
    image_size = 64
    raw = [Tensor(np.zeros((1, 7, image_size // s, image_size // s))) for s in STRIDES]
    breakdown = compute_loss(raw, build_batch_targets([[]], image_size), image_size)
    assert breakdown.box_loss.item() == 0.0
    assert breakdown.class_loss.item() == 0.0
    assert breakdown.objectness_loss.item() == pytest.approx(math.log(2.0), abs=1e-12)
    assert breakdown.total.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_perfect_fit_limit_approaches_zero():
    image_size = 64
    labels = [[BoundingBox(DRONE, 0.4, 0.45, 0.3, 0.25)]]
    box = labels[0][0]
    raw = [np.full((1, 7, image_size // s, image_size // s), -40.0) for s in STRIDES]
    level = assign_level(box, image_size)
    cell = assign_cell(box, image_size, STRIDES[level])
    raw[level][0, :4, cell[0], cell[1]] = encode_box(box, image_size, STRIDES[level], cell)
    raw[level][0, 4, cell[0], cell[1]] = 40.0
    raw[level][0, 5, cell[0], cell[1]] = 40.0

    breakdown = compute_loss([Tensor(r) for r in raw], build_batch_targets(labels, image_size), image_size)
    # CIoU carries an eps in its union, so the limit is reached up to ~eps / area
    assert breakdown.total.item() < 1e-6
    assert breakdown.box_loss.item() < 1e-6


def test_loss_is_non_negative(rng):
    image_size = 64
    for _ in range(5):
        raw = [Tensor(r) for r in random_raw(rng, 2, image_size, scale=3.0)]
        breakdown = compute_loss(raw, build_batch_targets(LABELS, image_size), image_size)
        for value in breakdown.as_dict().values():
            assert value >= 0.0


def test_weights_scale_parts(rng):
    image_size = 64
    raw = [Tensor(r) for r in random_raw(rng, 2, image_size)]
    targets = build_batch_targets(LABELS, image_size)
    breakdown = compute_loss(raw, targets, image_size, LossWeights(box=1.0, objectness=0.0, classification=0.0))
    assert breakdown.total.item() == pytest.approx(breakdown.box_loss.item(), rel=1e-12)


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(box=-1.0)


def test_ciou_of_identical_boxes_is_one():
    pred = Tensor(np.array([[0.0, 0.0, 0.0, 0.0]]))
    rows, cols = np.array([2]), np.array([3])
    decoded = decode_cells(pred, rows, cols, 8, 160)
    target = np.array([[value.data[0] for value in decoded]])
    assert ciou(decoded, target).data[0] == pytest.approx(1.0, abs=1e-6)


def test_gradcheck_through_loss(rng):
    image_size = 64
    targets = build_batch_targets(LABELS, image_size)
    levels = [Tensor(r) for r in random_raw(rng, 2, image_size, scale=0.5)]
    assert grad_check(lambda *raw: compute_loss(list(raw), targets, image_size).total, levels) < 1e-5


def test_no_positives_still_backpropagates_objectness(rng):
    image_size = 64
    levels = [Tensor(r, requires_grad=True) for r in random_raw(rng, 1, image_size)]
    with Tape() as tape:
        breakdown = compute_loss(levels, build_batch_targets([[]], image_size), image_size)
    tape.backward(breakdown.total)
    for level in levels:
        assert np.any(level.grad[:, 4] != 0)
        assert not np.any(level.grad[:, :4])
