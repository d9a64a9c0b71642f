import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engines.backbone import ModelConfig, ablation_flags
from engines.detector import PRIOR_PROBABILITY, build_model, forward
from engines.postprocess import decode, nms, postprocess, predict
from tools.dataset.data import BIRD, DRONE, BoundingBox, Detection, Sample, sample_id_type
from tools.metrics.boxes import iou
from tools.tensor.tensor import ShapeError, Tensor


def small_config(image_size: int = 160, name: str = "m6") -> ModelConfig:
    return ModelConfig(
        image_size=image_size, stem_channels=4, widths=(8, 8, 16), csp_depth=1, flags=ablation_flags(name)
    )


def empty_raw(image_size: int = 160, batch: int = 1, fill: float = -30.0) -> list[np.ndarray]:
    return [np.full((batch, 7, image_size // s, image_size // s), fill) for s in (8, 16, 32)]


def test_forward_shapes_at_160(rng):
    model = build_model(small_config())
    raw = forward(model, Tensor(rng.uniform(size=(2, 1, 160, 160))))
    assert [level.shape for level in raw] == [(2, 7, 20, 20), (2, 7, 10, 10), (2, 7, 5, 5)]


def test_forward_is_deterministic(rng):
    images = Tensor(rng.uniform(size=(1, 1, 64, 64)))
    first = forward(build_model(small_config(64), seed=7), images)
    second = forward(build_model(small_config(64), seed=7), images)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.data, b.data)


def test_forward_rejects_wrong_size(rng):
    model = build_model(small_config(64))
    with pytest.raises(ShapeError):
        model(Tensor(rng.uniform(size=(1, 1, 96, 96))))


def test_head_starts_at_low_prior():
    model = build_model(small_config(64))
    prior = math.log(PRIOR_PROBABILITY / (1 - PRIOR_PROBABILITY))
    for head in model.heads:
        np.testing.assert_allclose(head.predict.bias.data[4:], prior)
        assert not head.predict.bias.data[:4].any()


def test_decode_formula_example():
    raw = empty_raw()
    raw[0][0, :4, 2, 3] = 0.0
    raw[0][0, 4:, 2, 3] = 30.0
    (detections,) = decode(raw, 0.5)
    assert len(detections) == 1
    box = detections[0].box
    assert box.cx == pytest.approx(0.175)
    assert box.cy == pytest.approx(0.125)
    assert box.w == pytest.approx(0.2)
    assert box.h == pytest.approx(0.2)


def test_decode_clips_boxes_crossing_the_edge():
    raw = empty_raw()
    raw[0][0, :4, 2, 0] = 0.0
    raw[0][0, 4:, 2, 0] = 30.0
    (detections,) = decode(raw, 0.5)
    box = detections[0].box
    # unclipped: cx 0.025, w 0.2, so the left side at -0.075 moves to 0
    x1, y1, x2, y2 = box.corners()
    assert x1 == 0.0
    assert x2 == pytest.approx(0.125)
    assert (box.cx, box.w) == pytest.approx((0.0625, 0.125))
    assert (y1, y2) == pytest.approx((0.025, 0.225))


def test_decode_threshold_one_is_empty(rng):
    raw = [rng.normal(size=level.shape) for level in empty_raw()]
    assert decode(raw, 1.0) == [[]]


def test_decode_rejects_bad_threshold():
    with pytest.raises(ValueError):
        decode(empty_raw(), 1.5)


def test_decode_is_monotone_in_threshold(rng):
    raw = [rng.normal(scale=2.0, size=level.shape) for level in empty_raw(batch=2)]
    for low, high in [(0.0, 0.1), (0.1, 0.3), (0.3, 0.6)]:
        for loose, strict in zip(decode(raw, low), decode(raw, high)):
            assert set(strict) <= set(loose)


def test_decode_confidence_is_objectness_times_best_class():
    raw = empty_raw()
    raw[1][0, :4, 4, 4] = 0.0
    raw[1][0, 4, 4, 4] = 0.0
    raw[1][0, 5, 4, 4] = -1.0
    raw[1][0, 6, 4, 4] = 2.0
    (detections,) = decode(raw, 0.3)
    assert len(detections) == 1
    assert detections[0].class_id == BIRD
    assert detections[0].confidence == pytest.approx(0.5 / (1.0 + math.exp(-2.0)))


def test_decode_rejects_inconsistent_levels():
    raw = empty_raw()
    raw[2] = np.zeros((1, 7, 4, 4))
    with pytest.raises(ShapeError):
        decode(raw, 0.5)


def det(class_id: int, cx: float, cy: float, w: float, h: float, confidence: float) -> Detection:
    return Detection(BoundingBox(class_id, cx, cy, w, h), confidence)


def test_nms_suppresses_duplicate():
    kept = nms([det(DRONE, 0.5, 0.5, 0.2, 0.2, 0.8), det(DRONE, 0.5, 0.5, 0.2, 0.2, 0.9)], 0.5)
    assert [d.confidence for d in kept] == [0.9]


def test_nms_keeps_disjoint_and_other_class():
    dets = [
        det(DRONE, 0.2, 0.2, 0.1, 0.1, 0.9),
        det(DRONE, 0.8, 0.8, 0.1, 0.1, 0.7),
        det(BIRD, 0.2, 0.2, 0.1, 0.1, 0.6),
    ]
    assert len(nms(dets, 0.5)) == 3


def test_nms_ties_keep_input_order():
    first = det(DRONE, 0.5, 0.5, 0.2, 0.2, 0.7)
    second = det(DRONE, 0.51, 0.5, 0.2, 0.2, 0.7)
    assert nms([first, second], 0.5) == [first]


def brute_force_nms(dets: list[Detection], threshold: float) -> list[Detection]:
    remaining = list(range(len(dets)))
    kept: list[Detection] = []
    while remaining:
        best = remaining[0]
        for k in remaining[1:]:
            if dets[k].confidence > dets[best].confidence:
                best = k
        kept.append(dets[best])
        remaining = [
            k
            for k in remaining
            if k != best and not (dets[k].class_id == dets[best].class_id and iou(dets[k].box, dets[best].box) >= threshold)
        ]
    return kept


box_strategy = st.builds(
    det,
    st.integers(0, 1),
    st.floats(0.2, 0.8),
    st.floats(0.2, 0.8),
    st.floats(0.05, 0.4),
    st.floats(0.05, 0.4),
    st.floats(0.0, 1.0),
)


@settings(max_examples=200, deadline=None)
@given(dets=st.lists(box_strategy, max_size=5), threshold=st.floats(0.1, 0.9))
def test_nms_matches_brute_force(dets, threshold):
    kept = nms(dets, threshold)
    assert kept == brute_force_nms(dets, threshold)
    for a in range(len(kept)):
        for b in range(a + 1, len(kept)):
            if kept[a].class_id == kept[b].class_id:
                assert iou(kept[a].box, kept[b].box) < threshold


def test_postprocess_caps_detections(rng):
    raw = empty_raw(fill=0.0)
    for level in raw:
        level[0, 4:] = 30.0
    (detections,) = postprocess(raw, conf_threshold=0.1, iou_threshold=1.0, max_detections=7)
    assert len(detections) == 7


def test_predict_maps_sample_ids(rng):
    model = build_model(small_config(64))
    samples = [Sample(sample_id_type(f"{k:06d}"), rng.uniform(size=(1, 64, 64))) for k in range(3)]
    predictions = predict(model, samples, conf_threshold=0.0, iou_threshold=0.5, batch_size=2)
    assert sorted(predictions) == ["000000", "000001", "000002"]
    assert all(isinstance(d, Detection) for dets in predictions.values() for d in dets)
