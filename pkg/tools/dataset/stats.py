from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from tools.dataset.data import CLASS_NAMES, BoundingBox, Sample, SizeBin

EXTREMELY_SMALL_EDGE = 20.0
SMALL_EDGE = 32.0
LARGE_EDGE = 96.0


def size_bin(box: BoundingBox, image_size: int) -> SizeBin:
    """
    Bin by pixel size. Exact edges fall into the lower bin, so 32x32 is small
    and 96x96 is medium.
    """
    w, h = box.pixel_size(image_size)
    if w < EXTREMELY_SMALL_EDGE and h < EXTREMELY_SMALL_EDGE:
        return SizeBin.EXTREMELY_SMALL
    if w > LARGE_EDGE or h > LARGE_EDGE:
        return SizeBin.LARGE
    if max(w, h) > SMALL_EDGE:
        return SizeBin.MEDIUM
    return SizeBin.SMALL


@dataclass
class DatasetCensus:
    images: int = 0
    objects: int = 0
    per_class: dict[str, int] = field(default_factory=lambda: {name: 0 for name in CLASS_NAMES})
    per_bin: dict[str, int] = field(default_factory=lambda: {b.value: 0 for b in SizeBin})
    # smallest object per class as (w, h) in pixels, by area
    smallest: dict[str, Optional[tuple[float, float]]] = field(
        default_factory=lambda: {name: None for name in CLASS_NAMES}
    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "images": self.images,
            "objects": self.objects,
            "per_class": dict(self.per_class),
            "per_bin": dict(self.per_bin),
            "smallest": {k: list(v) if v else None for k, v in self.smallest.items()},
        }


def class_name(class_id: int) -> str:
    return CLASS_NAMES[class_id] if class_id < len(CLASS_NAMES) else f"class_{class_id}"


def dataset_stats(samples: Sequence[Sample]) -> DatasetCensus:
    census = DatasetCensus(images=len(samples))
    for sample in samples:
        for box in sample.labels:
            name = class_name(box.class_id)
            census.objects += 1
            census.per_class[name] = census.per_class.get(name, 0) + 1
            census.per_bin[size_bin(box, sample.image_size).value] += 1
            w, h = box.pixel_size(sample.image_size)
            current = census.smallest.get(name)
            if current is None or w * h < current[0] * current[1]:
                census.smallest[name] = (w, h)
    return census
