import math
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

DEFAULT_RATIOS = (0.7, 0.2, 0.1)
SPLIT_NAMES = ("train", "val", "test")


class SplitError(ValueError):
    """Raised on bad ratios or a split that would come out empty."""


def split_sizes(count: int, ratios: Sequence[float]) -> list[int]:
    """floor(count * ratio) for every split but the last, which takes the remainder."""
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be non-negative and sum to 1, got {list(ratios)}")
    # the epsilon keeps products like 100 * 0.7 = 69.99999 from flooring down
    sizes = [int(math.floor(count * r + 1e-9)) for r in ratios[:-1]]
    sizes.append(count - sum(sizes))
    for size, ratio in zip(sizes, ratios):
        if ratio > 0 and size == 0:
            raise SplitError(f"{count} samples leave a split with ratio {ratio} empty")
    return sizes


def split_dataset(
    samples: Sequence[T], ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0
) -> tuple[list[T], ...]:
    """Seeded shuffle, then contiguous slices in ratio order."""
    sizes = split_sizes(len(samples), ratios)
    order = np.random.default_rng(seed).permutation(len(samples))
    parts = []
    start = 0
    for size in sizes:
        parts.append([samples[k] for k in order[start : start + size]])
        start += size
    return tuple(parts)
