import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Self, Sequence

from engines.detector import Detector
from engines.postprocess import postprocess
from tools.dataset.data import Sample
from tools.tensor.ops import to_tensor

logger = logging.getLogger(__name__)

WARMUP_FRAMES = 3
MIN_TIMED_FRAMES = 10


class CodeTimer:
    """
    Context manager for timing code blocks.

    Example:
        with CodeTimer("epoch") as timer:
            run_epoch()
        print(timer.execution_time)
    """

    def __init__(self, name: Optional[str] = None) -> None:
        self.name = name
        self.execution_time: float = 0.0

    def __enter__(self) -> Self:
        self.start_time: float = time.perf_counter()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.execution_time = time.perf_counter() - self.start_time
        if self.name:
            logger.debug("%s took %.4f seconds", self.name, self.execution_time)


def timing_stats(times: Sequence[float]) -> dict[str, float]:
    return {
        "min": min(times),
        "max": max(times),
        "mean": statistics.mean(times),
        "median": statistics.median(times),
        "stdev": statistics.stdev(times) if len(times) > 1 else 0.0,
        "total": sum(times),
    }


@dataclass
class InferenceTiming:
    ait_per_frame: float
    frames: int
    stats: dict[str, float] = field(default_factory=dict)


def timed_inference(
    model: Detector,
    samples: Sequence[Sample],
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.5,
    warmup: int = WARMUP_FRAMES,
) -> InferenceTiming:
    """
    Average wall-clock seconds per frame for forward + decode + NMS, one frame
    at a time. The first `warmup` frames are not timed. Small sets are cycled
    until at least MIN_TIMED_FRAMES frames have been timed.
    """
    if not samples:
        raise ValueError("timed_inference needs at least one sample")
    frames = max(len(samples), MIN_TIMED_FRAMES)
    if len(samples) < MIN_TIMED_FRAMES:
        logger.warning("only %d samples; cycling them to time %d frames", len(samples), frames)

    times: list[float] = []
    for k in range(warmup + frames):
        sample = samples[k % len(samples)]
        with CodeTimer() as timer:
            postprocess(model(to_tensor(sample.image, dtype=model.dtype)), conf_threshold, iou_threshold)
        if k >= warmup:
            times.append(timer.execution_time)
    stats = timing_stats(times)
    logger.info("inference: %.4f s/frame over %d frames", stats["mean"], frames)
    return InferenceTiming(stats["mean"], frames, stats)
