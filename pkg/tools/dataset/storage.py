"""
On-disk dataset layout:

    images/{id}.ppm
    labels/{id}.txt
    splits/{train,val,test}.txt   one id per line
    census.json
"""

import json
import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from tools.dataset.data import Sample, sample_id_type
from tools.dataset.images import load_image, save_image
from tools.dataset.labels import read_labels, write_labels
from tools.dataset.splits import SPLIT_NAMES
from tools.dataset.stats import dataset_stats

logger = logging.getLogger(__name__)

IMAGE_SUFFIX = ".ppm"


class DatasetExistsError(FileExistsError):
    """Raised when writing into a non-empty directory without force."""


def save_dataset(
    root: Union[str, Path],
    samples: Sequence[Sample],
    splits: Mapping[str, Sequence[Sample]],
    force: bool = False,
    image_suffix: str = IMAGE_SUFFIX,
) -> Path:
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise DatasetExistsError(f"{root} is not empty; pass force to overwrite")
    for sub in ("images", "labels", "splits"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    for sample in samples:
        save_image(root / "images" / f"{sample.id}{image_suffix}", sample.image)
        write_labels(root / "labels" / f"{sample.id}.txt", sample.labels)
    for name, members in splits.items():
        (root / "splits" / f"{name}.txt").write_text(
            "".join(f"{sample.id}\n" for sample in members), encoding="utf-8"
        )
    census = dataset_stats(samples)
    (root / "census.json").write_text(json.dumps(census.to_dict(), indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %d samples to %s", len(samples), root)
    return root


def _image_path(root: Path, sample_id: str) -> Path:
    for path in sorted((root / "images").glob(f"{sample_id}.*")):
        return path
    raise FileNotFoundError(f"no image for sample {sample_id} under {root / 'images'}")


def load_sample(root: Union[str, Path], sample_id: str, num_classes: int = 2) -> Sample:
    root = Path(root)
    image = load_image(_image_path(root, sample_id))
    labels = read_labels(root / "labels" / f"{sample_id}.txt", num_classes)
    return Sample(sample_id_type(sample_id), image, labels)


def split_ids(root: Union[str, Path], split: str) -> list[str]:
    path = Path(root) / "splits" / f"{split}.txt"
    if not path.is_file():
        raise FileNotFoundError(f"split {split!r} not found at {path}")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_dataset(
    root: Union[str, Path], split: Optional[str] = None, num_classes: int = 2
) -> list[Sample]:
    """Samples of one split, or every sample (sorted by id) when split is None."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    if split is None:
        ids = sorted(path.stem for path in (root / "labels").glob("*.txt"))
    else:
        ids = split_ids(root, split)
    samples = [load_sample(root, sample_id, num_classes) for sample_id in ids]
    logger.info("loaded %d samples from %s (%s)", len(samples), root, split or "all")
    return samples


def available_splits(root: Union[str, Path]) -> list[str]:
    return [name for name in SPLIT_NAMES if (Path(root) / "splits" / f"{name}.txt").is_file()]
