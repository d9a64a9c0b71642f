import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engines.postprocess import decode
from engines.targets import (
    assign_cell,
    assign_level,
    assign_targets,
    build_batch_targets,
    encode_box,
)
from tools.dataset.data import BIRD, DRONE, BoundingBox


def test_twelve_pixel_object_goes_to_finest_level():
    box = BoundingBox(DRONE, 0.5, 0.5, 12 / 160, 10 / 160)
    assert assign_level(box, 160) == 0


def test_full_image_box_goes_to_deepest_level():
    assert assign_level(BoundingBox(BIRD, 0.5, 0.5, 1.0, 1.0), 160) == 2


def test_level_tie_prefers_finer_level():
    # 48 px sits exactly between 32 and 64
    assert assign_level(BoundingBox(DRONE, 0.5, 0.5, 48 / 160, 0.1), 160) == 0


def test_cell_contains_centre_and_clips_right_edge():
    assert assign_cell(BoundingBox(DRONE, 0.175, 0.125, 0.1, 0.1), 160, 8) == (2, 3)
    assert assign_cell(BoundingBox(DRONE, 1.0, 1.0, 0.1, 0.1), 160, 8) == (19, 19)


def test_same_cell_keeps_larger_box():
    small = BoundingBox(DRONE, 0.51, 0.51, 0.05, 0.05)
    large = BoundingBox(BIRD, 0.52, 0.52, 0.08, 0.08)
    for order in ([small, large], [large, small]):
        levels = assign_targets(order, 160)
        assert sum(level.count for level in levels) == 1
        fine = levels[0]
        row, col = assign_cell(large, 160, 8)
        assert fine.classes[row, col] == BIRD
        np.testing.assert_allclose(fine.boxes[row, col], (0.52, 0.52, 0.08, 0.08))


def test_level_shapes():
    levels = assign_targets([], 160)
    assert [level.positive.shape for level in levels] == [(20, 20), (10, 10), (5, 5)]
    assert [level.stride for level in levels] == [8, 16, 32]
    assert all(level.count == 0 for level in levels)


def test_batch_targets_stack_images():
    labels = [[BoundingBox(DRONE, 0.3, 0.3, 0.1, 0.1)], [], [BoundingBox(BIRD, 0.5, 0.5, 0.9, 0.9)]]
    targets = build_batch_targets(labels, 160)
    assert targets.positive[0].shape == (3, 20, 20)
    assert targets.boxes[2].shape == (3, 5, 5, 4)
    assert targets.count == 2
    assert targets.positive[0][0].sum() == 1 and targets.positive[2][2].sum() == 1


@settings(max_examples=100, deadline=None)
@given(
    cx=st.floats(0.02, 0.98),
    cy=st.floats(0.02, 0.98),
    w=st.floats(6 / 160, 0.9),
    h=st.floats(6 / 160, 0.9),
)
def test_encode_decode_fixed_point(cx, cy, w, h):
    half_w, half_h = min(w, 2 * cx, 2 * (1 - cx)) / 2, min(h, 2 * cy, 2 * (1 - cy)) / 2
    box = BoundingBox(DRONE, cx, cy, 2 * half_w, 2 * half_h)
    image_size = 160
    level = assign_level(box, image_size)
    stride = (8, 16, 32)[level]
    cell = assign_cell(box, image_size, stride)
    tx, ty, tw, th = encode_box(box, image_size, stride, cell)

    raw = [np.full((1, 7, image_size // s, image_size // s), -50.0) for s in (8, 16, 32)]
    raw[level][0, :4, cell[0], cell[1]] = (tx, ty, tw, th)
    raw[level][0, 4, cell[0], cell[1]] = 50.0
    raw[level][0, 5, cell[0], cell[1]] = 50.0

    (detections,) = decode(raw, 0.5)
    assert len(detections) == 1
    got = detections[0].box
    assert got.class_id == DRONE
    np.testing.assert_allclose((got.cx, got.cy, got.w, got.h), (box.cx, box.cy, box.w, box.h), atol=1e-6)


@pytest.mark.parametrize("image_size", [64, 160, 320])
def test_every_box_is_assigned_somewhere(image_size, rng):
    boxes = [
        BoundingBox(DRONE, float(x), float(y), float(s), float(s))
        for x, y, s in zip(rng.uniform(0.1, 0.9, 20), rng.uniform(0.1, 0.9, 20), rng.uniform(0.02, 0.2, 20))
    ]
    for box in boxes:
        assert sum(level.count for level in assign_targets([box], image_size)) == 1
