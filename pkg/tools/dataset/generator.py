"""
Procedural bird / drone scenes.

A scene is a low-frequency sky with optional clutter, onto which drones
(two crossing bars with four rotor discs) and birds (two curved wings meeting
at a vertex) are composited with anti-aliased coverage. Labels are the tight
boxes of each object's covered pixels, clipped to the image. Every random draw
comes from one generator seeded per scene, so a seed fixes the bytes.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from tools.dataset.data import BIRD, DRONE, BoundingBox, Sample, sample_id_type

logger = logging.getLogger(__name__)

MIN_SCALE = 5.0
# upper end of the small-object regime; with blur and anti-aliasing the
# rendered extent stays below 32 px
SMALL_SCALE_MAX = 20.0
MAX_BLUR = 6
SUPERSAMPLE = 3
# coverage above this counts as an object pixel
ALPHA_FLOOR = 0.02
PLACEMENT_RETRIES = 100
MAX_OVERLAP = 0.9
MIN_VISIBLE = 0.25

FloatImage = NDArray[np.float64]


class SceneGenerationError(RuntimeError):
    """Raised when objects cannot be placed within the retry budget."""


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 160
    min_objects: int = 1
    max_objects: int = 4
    bird_probability: float = 0.5
    min_scale: float = 6.0
    max_scale: float = 64.0
    clutter_density: float = 0.3
    occlusion_probability: float = 0.1
    blur_probability: float = 0.2
    boundary_probability: float = 0.1
    small_bias: float = 0.5
    channels: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.image_size < 32:
            raise ValueError(f"image size must be at least 32, got {self.image_size}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError(f"invalid object count range [{self.min_objects}, {self.max_objects}]")
        if self.min_scale < MIN_SCALE:
            raise ValueError(f"min_scale must be at least {MIN_SCALE} px, got {self.min_scale}")
        if self.max_scale < self.min_scale:
            raise ValueError(f"max_scale {self.max_scale} is below min_scale {self.min_scale}")
        for name in (
            "bird_probability",
            "clutter_density",
            "occlusion_probability",
            "blur_probability",
            "boundary_probability",
            "small_bias",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")


@dataclass
class RenderedObject:
    class_id: int
    # object pixels (coverage above ALPHA_FLOOR) over the whole image
    mask: NDArray[np.bool_]
    box: BoundingBox


@dataclass
class RenderedScene:
    sample: Sample
    objects: list[RenderedObject] = field(default_factory=list)


def _drone_coverage(u: FloatImage, v: FloatImage) -> NDArray[np.bool_]:
    arm, reach, rotor = 0.1, 0.72, 0.26
    inside = (np.abs(v) < arm) & (np.abs(u) < reach)
    inside |= (np.abs(u) < arm) & (np.abs(v) < reach)
    for cu, cv in ((reach, 0.0), (-reach, 0.0), (0.0, reach), (0.0, -reach)):
        inside |= (u - cu) ** 2 + (v - cv) ** 2 < rotor**2
    inside |= u**2 + v**2 < 0.2**2
    return inside


def _bird_coverage(u: FloatImage, v: FloatImage) -> NDArray[np.bool_]:
    span = np.abs(u)
    wing = 0.25 - 0.9 * span + 0.35 * u**2
    thickness = 0.16 - 0.08 * span
    inside = (span <= 0.95) & (np.abs(v - wing) < thickness)
    inside |= u**2 + (v - 0.25) ** 2 < 0.15**2
    return inside


def _render_alpha(
    class_id: int,
    scale: float,
    angle: float,
    centre: tuple[float, float],
    blur: Optional[tuple[int, float]],
) -> tuple[FloatImage, int, int]:
    """
    Coverage patch of one object in absolute pixel coordinates.
    Returns (alpha, top row, left column); the patch may extend past the image.
    """
    cy, cx = centre
    margin = 2 + (blur[0] if blur else 0)
    top = int(math.floor(cy - scale / 2)) - margin
    left = int(math.floor(cx - scale / 2)) - margin
    size = int(math.ceil(scale)) + 2 * margin + 1

    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys = (top + np.arange(size)[:, None] + sub[None, :]).reshape(-1)
    xs = (left + np.arange(size)[:, None] + sub[None, :]).reshape(-1)
    dy, dx = np.meshgrid(ys - cy, xs - cx, indexing="ij")
    radius = scale / 2
    u = (dx * math.cos(angle) + dy * math.sin(angle)) / radius
    v = (-dx * math.sin(angle) + dy * math.cos(angle)) / radius
    shape = _bird_coverage if class_id == BIRD else _drone_coverage
    inside = shape(u, v) & (u**2 + v**2 <= 1.0)
    alpha = inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))

    if blur:
        length, direction = blur
        steps = np.linspace(-(length - 1) / 2, (length - 1) / 2, length)
        smeared = np.zeros_like(alpha)
        for t in steps:
            shift = (int(round(t * math.sin(direction))), int(round(t * math.cos(direction))))
            smeared += np.roll(alpha, shift, axis=(0, 1))
        alpha = smeared / length
    return alpha, top, left


def _paste(alpha: FloatImage, top: int, left: int, image_size: int) -> FloatImage:
    full = np.zeros((image_size, image_size))
    r0, c0 = max(top, 0), max(left, 0)
    r1 = min(top + alpha.shape[0], image_size)
    c1 = min(left + alpha.shape[1], image_size)
    if r1 > r0 and c1 > c0:
        full[r0:r1, c0:c1] = alpha[r0 - top : r1 - top, c0 - left : c1 - left]
    return full


def _extent(alpha: FloatImage, top: int, left: int) -> tuple[int, int, int, int]:
    """Unclipped pixel box (x1, y1, x2, y2), ends exclusive, of a coverage patch."""
    covered = alpha > ALPHA_FLOOR
    rows = np.flatnonzero(covered.any(axis=1))
    cols = np.flatnonzero(covered.any(axis=0))
    return left + int(cols[0]), top + int(rows[0]), left + int(cols[-1]) + 1, top + int(rows[-1]) + 1


def visible_box_fraction(extent: tuple[int, int, int, int], image_size: int) -> float:
    """Share of a pixel box's area that lies inside the image."""
    x1, y1, x2, y2 = extent
    inside_w = max(0, min(x2, image_size) - max(x1, 0))
    inside_h = max(0, min(y2, image_size) - max(y1, 0))
    return inside_w * inside_h / ((x2 - x1) * (y2 - y1))


def _tight_box(mask: NDArray[np.bool_], class_id: int, image_size: int) -> BoundingBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox.from_corners(
        class_id,
        cols[0] / image_size,
        rows[0] / image_size,
        (cols[-1] + 1) / image_size,
        (rows[-1] + 1) / image_size,
    )


def _overlap(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over the smaller box."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    inter = max(0.0, min(ax2, bx2) - max(ax1, bx1)) * max(0.0, min(ay2, by2) - max(ay1, by1))
    return inter / min(a.area, b.area)


def _smooth_field(rng: np.random.Generator, size: int, cells: int) -> FloatImage:
    coarse = rng.random((cells, cells))
    grid = np.linspace(0, cells - 1, size)
    rows = np.stack([np.interp(grid, np.arange(cells), row) for row in coarse])
    return np.stack([np.interp(grid, np.arange(cells), col) for col in rows.T], axis=1)


def _background(spec: SceneSpec, rng: np.random.Generator) -> FloatImage:
    size = spec.image_size
    base = rng.uniform(0.35, 0.85)
    sky = base + 0.15 * (_smooth_field(rng, size, int(rng.integers(3, 7))) - 0.5)
    sky += np.linspace(-0.05, 0.05, size)[:, None] * rng.choice([-1.0, 1.0])

    clutter = int(rng.poisson(spec.clutter_density * 8))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for _ in range(clutter):
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(4, size / 4, 2)
        level = rng.uniform(0.2, 0.9)
        opacity = rng.uniform(0.15, 0.5)
        blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        sky = np.where(blob, sky * (1 - opacity) + level * opacity, sky)
    return sky


def _sample_scale(spec: SceneSpec, rng: np.random.Generator) -> float:
    if rng.random() < spec.small_bias:
        high = min(max(spec.min_scale, SMALL_SCALE_MAX), spec.max_scale)
        return float(rng.uniform(spec.min_scale, high))
    return float(math.exp(rng.uniform(math.log(spec.min_scale), math.log(spec.max_scale))))


def _sample_centre(spec: SceneSpec, rng: np.random.Generator, scale: float) -> tuple[float, float]:
    size = spec.image_size
    if rng.random() < spec.boundary_probability:
        along = rng.uniform(0, size)
        across = rng.uniform(-scale / 4, scale / 4)
        edge = int(rng.integers(4))
        if edge == 0:
            return across, along
        if edge == 1:
            return size - across, along
        if edge == 2:
            return along, across
        return along, size - across
    low, high = scale / 2, size - scale / 2
    if high <= low:
        return size / 2, size / 2
    return float(rng.uniform(low, high)), float(rng.uniform(low, high))


def render_scene(spec: SceneSpec, rng_seed: int, sample_id: str = "000000") -> RenderedScene:
    rng = np.random.default_rng(rng_seed)
    size = spec.image_size
    image = _background(spec, rng)
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))

    objects: list[RenderedObject] = []
    for index in range(count):
        class_id = BIRD if rng.random() < spec.bird_probability else DRONE
        for _ in range(PLACEMENT_RETRIES):
            scale = _sample_scale(spec, rng)
            centre = _sample_centre(spec, rng, scale)
            angle = float(rng.uniform(0, 2 * math.pi))
            blur = None
            if rng.random() < spec.blur_probability:
                blur = (int(rng.integers(3, MAX_BLUR + 1)), float(rng.uniform(0, math.pi)))
            alpha, top, left = _render_alpha(class_id, scale, angle, centre, blur)
            visible = _paste(alpha, top, left, size)
            mask = visible > ALPHA_FLOOR
            if not mask.any() or visible.sum() < MIN_VISIBLE * alpha.sum():
                continue
            if visible_box_fraction(_extent(alpha, top, left), size) < MIN_VISIBLE:
                continue
            box = _tight_box(mask, class_id, size)
            if any(_overlap(box, other.box) > MAX_OVERLAP for other in objects):
                continue
            break
        else:
            raise SceneGenerationError(
                f"could not place object {index + 1} of {count} in {PLACEMENT_RETRIES} attempts"
            )

        background_level = float(image[mask].mean())
        contrast = rng.uniform(0.25, 0.6) * (-1.0 if background_level > 0.45 else 1.0)
        level = float(np.clip(background_level + contrast, 0.0, 1.0))
        image = image * (1.0 - visible) + level * visible
        objects.append(RenderedObject(class_id, mask, box))

    if objects and rng.random() < spec.occlusion_probability:
        target = objects[int(rng.integers(len(objects)))]
        x1, y1, x2, y2 = (c * size for c in target.box.corners())
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        cy, cx = rng.uniform(y1, y2), rng.uniform(x1, x2)
        radius = max(x2 - x1, y2 - y1) * rng.uniform(0.2, 0.45)
        cover = ((yy - cy) ** 2 + (xx - cx) ** 2 < radius**2) * rng.uniform(0.3, 0.6)
        image = image * (1.0 - cover) + rng.uniform(0.3, 0.9) * cover

    image = image + rng.normal(0.0, rng.uniform(0.005, 0.02), image.shape)
    if spec.channels == 3:
        tint = np.array([0.92, 0.97, 1.04])[:, None, None]
        planes = np.clip(image[None] * tint, 0.0, 1.0)
    else:
        planes = image[None]
    quantized = np.round(np.clip(planes, 0.0, 1.0) * 255.0) / 255.0
    sample = Sample(sample_id_type(sample_id), quantized, [o.box for o in objects])
    return RenderedScene(sample, objects)


def generate_scene(spec: SceneSpec, rng_seed: int, sample_id: str = "000000") -> Sample:
    """One deterministic scene for `rng_seed`."""
    return render_scene(spec, rng_seed, sample_id).sample


def generate_dataset(
    spec: SceneSpec, count: int, base_seed: Optional[int] = None, threads: int = 1
) -> list[Sample]:
    """Scene k uses seed base_seed + k and id f"{k:06d}"."""
    base = spec.seed if base_seed is None else base_seed

    def one(index: int) -> Sample:
        return generate_scene(spec, base + index, f"{index:06d}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(one, range(count)))
    else:
        samples = [one(index) for index in range(count)]
    logger.info("generated %d scenes (seed %d, %d px)", count, base, spec.image_size)
    return samples
