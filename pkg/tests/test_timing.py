import time

import pytest

from engines.backbone import ModelConfig, ablation_flags
from engines.detector import build_model
from programs.performance.timing import MIN_TIMED_FRAMES, CodeTimer, timed_inference, timing_stats
from tools.dataset.data import Sample, sample_id_type


def test_code_timer_measures_block():
    with CodeTimer("sleep") as timer:
        time.sleep(0.01)
    assert timer.execution_time >= 0.009


def test_timing_stats():
    stats = timing_stats([1.0, 2.0, 3.0])
    assert stats["mean"] == 2.0 and stats["median"] == 2.0 and stats["total"] == 6.0
    assert timing_stats([0.5])["stdev"] == 0.0


def test_small_sets_are_cycled(rng):
    config = ModelConfig(image_size=64, stem_channels=4, widths=(8, 8, 8), csp_depth=1, flags=ablation_flags("m6"))
    model = build_model(config)
    samples = [Sample(sample_id_type(str(k)), rng.uniform(size=(1, 64, 64))) for k in range(2)]
    timing = timed_inference(model, samples, warmup=1)
    assert timing.frames == MIN_TIMED_FRAMES
    assert timing.ait_per_frame > 0.0
    assert timing.stats["min"] <= timing.ait_per_frame <= timing.stats["max"]


def test_needs_samples():
    model = build_model(ModelConfig(image_size=64, stem_channels=4, widths=(8, 8, 8), csp_depth=1))
    with pytest.raises(ValueError):
        timed_inference(model, [])
