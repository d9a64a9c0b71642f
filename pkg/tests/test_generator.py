import numpy as np
import pytest

from tools.dataset import generator
from tools.dataset.data import SizeBin
from tools.dataset.generator import (
    ALPHA_FLOOR,
    MIN_VISIBLE,
    SceneGenerationError,
    SceneSpec,
    generate_dataset,
    generate_scene,
    render_scene,
)
from tools.dataset.stats import size_bin


def test_same_seed_gives_identical_scene():
    spec = SceneSpec(seed=5)
    first, second = generate_scene(spec, 11), generate_scene(spec, 11)
    assert first.image.tobytes() == second.image.tobytes()
    assert first.labels == second.labels


def test_different_seeds_differ():
    spec = SceneSpec()
    assert generate_scene(spec, 1).image.tobytes() != generate_scene(spec, 2).image.tobytes()


def test_fixed_object_count():
    spec = SceneSpec(min_objects=3, max_objects=3)
    for seed in range(5):
        assert len(generate_scene(spec, seed).labels) == 3


def test_smallest_scale_regime_is_extremely_small():
    spec = SceneSpec(min_scale=6, max_scale=7, min_objects=2, max_objects=4)
    for seed in range(10):
        sample = generate_scene(spec, seed)
        assert sample.labels
        assert all(size_bin(box, sample.image_size) is SizeBin.EXTREMELY_SMALL for box in sample.labels)


def test_labels_are_tight_boxes_of_rendered_pixels():
    spec = SceneSpec(min_objects=2, max_objects=4, blur_probability=0.5, boundary_probability=0.3)
    size = spec.image_size
    for seed in range(6):
        scene = render_scene(spec, seed)
        assert [o.box for o in scene.objects] == scene.sample.labels
        for obj in scene.objects:
            x1, y1, x2, y2 = (round(c * size) for c in obj.box.corners())
            rows = np.flatnonzero(obj.mask.any(axis=1))
            cols = np.flatnonzero(obj.mask.any(axis=0))
            assert (rows[0], rows[-1] + 1, cols[0], cols[-1] + 1) == (y1, y2, x1, x2)


def test_image_holds_eight_bit_levels_in_unit_range():
    image = generate_scene(SceneSpec(channels=3), 3).image
    assert image.shape == (3, 160, 160)
    assert image.min() >= 0.0 and image.max() <= 1.0
    np.testing.assert_allclose(image * 255, np.round(image * 255), atol=1e-9)


def test_crowded_scene_raises():
    spec = SceneSpec(
        image_size=32,
        min_objects=2,
        max_objects=2,
        bird_probability=0.0,
        min_scale=64,
        max_scale=64,
        blur_probability=0.0,
        boundary_probability=0.0,
    )
    with pytest.raises(SceneGenerationError, match="could not place"):
        generate_scene(spec, 0)


@pytest.mark.parametrize(
    "overrides",
    [
        {"min_scale": 4.0},
        {"max_scale": 5.5, "min_scale": 6.0},
        {"bird_probability": 1.5},
        {"occlusion_probability": -0.1},
        {"image_size": 16},
        {"min_objects": 3, "max_objects": 2},
        {"channels": 2},
    ],
)
def test_invalid_spec_rejected(overrides):
    with pytest.raises(ValueError):
        SceneSpec(**overrides)


def test_dataset_seeds_scenes_by_index():
    spec = SceneSpec(image_size=64, max_scale=24, seed=9)
    samples = generate_dataset(spec, 3)
    assert [s.id for s in samples] == ["000000", "000001", "000002"]
    assert samples[2].image.tobytes() == generate_scene(spec, 11).image.tobytes()


def test_threaded_generation_matches_serial():
    spec = SceneSpec(image_size=64, max_scale=24)
    serial = generate_dataset(spec, 4, base_seed=100)
    threaded = generate_dataset(spec, 4, base_seed=100, threads=3)
    for a, b in zip(serial, threaded):
        assert a.id == b.id
        assert a.image.tobytes() == b.image.tobytes()
        assert a.labels == b.labels


def covered_mask(alpha, top, left, size):
    rows, cols = np.nonzero(alpha > ALPHA_FLOOR)
    rows, cols = rows + top, cols + left
    keep = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
    mask = np.zeros((size, size), dtype=bool)
    mask[rows[keep], cols[keep]] = True
    return mask


def test_edge_objects_keep_a_quarter_of_their_box(monkeypatch):
    patches = []
    render_alpha = generator._render_alpha

    def recording(*args):
        patch = render_alpha(*args)
        patches.append(patch)
        return patch

    monkeypatch.setattr(generator, "_render_alpha", recording)
    spec = SceneSpec(min_objects=3, max_objects=5, boundary_probability=1.0, blur_probability=0.3)
    size = spec.image_size
    crossing = 0
    for seed in range(8):
        patches.clear()
        scene = render_scene(spec, seed)
        for obj in scene.objects:
            alpha, top, left = [p for p in patches if np.array_equal(covered_mask(*p, size), obj.mask)][-1]
            rows = np.flatnonzero((alpha > ALPHA_FLOOR).any(axis=1)) + top
            cols = np.flatnonzero((alpha > ALPHA_FLOOR).any(axis=0)) + left
            x1, y1, x2, y2 = cols[0], rows[0], cols[-1] + 1, rows[-1] + 1
            inside = (min(x2, size) - max(x1, 0)) * (min(y2, size) - max(y1, 0))
            assert inside / ((x2 - x1) * (y2 - y1)) >= MIN_VISIBLE
            crossing += int(x1 < 0 or y1 < 0 or x2 > size or y2 > size)
            bx1, by1, bx2, by2 = obj.box.corners()
            assert -1e-12 <= bx1 < bx2 <= 1.0 + 1e-12
            assert -1e-12 <= by1 < by2 <= 1.0 + 1e-12
    assert crossing > 0
