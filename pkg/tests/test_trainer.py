import json
import math

import numpy as np
import pytest

from engines.backbone import ModelConfig, ablation_flags
from engines.detector import build_model
from engines.nn import ConfigError
from engines.trainer import (
    SGD,
    DivergenceError,
    TrainConfig,
    cosine_lr,
    train,
    train_step,
)
from engines.weights import save_weights
from tools.dataset.data import BIRD, DRONE, BoundingBox, Sample, sample_id_type
from tools.dataset.generator import SceneSpec, generate_dataset
from tools.tensor.tensor import NonFiniteError, strict_mode


def tiny_model(name: str = "m1", seed: int = 0, dtype=np.float64):
    config = ModelConfig(image_size=64, stem_channels=4, widths=(8, 8, 8), csp_depth=1, flags=ablation_flags(name))
    return build_model(config, seed=seed, dtype=dtype)


def tiny_samples(count: int = 4, seed: int = 0) -> list[Sample]:
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(count):
        image = np.round(rng.uniform(size=(1, 64, 64)) * 255) / 255
        labels = [BoundingBox(DRONE if k % 2 else BIRD, 0.3 + 0.1 * k, 0.5, 0.2, 0.15)]
        samples.append(Sample(sample_id_type(f"{k:06d}"), image, labels))
    return samples


def tiny_config(**overrides) -> TrainConfig:
    values = dict(image_size=64, batch_size=2, epochs=2, learning_rate=0.01, precision="float64", seed=3)
    values.update(overrides)
    return TrainConfig(**values)


def test_cosine_schedule_endpoints():
    config = TrainConfig(epochs=300, learning_rate=0.01)
    assert cosine_lr(0, config) == pytest.approx(0.01)
    assert cosine_lr(299, config) == pytest.approx(0.0001)
    assert cosine_lr(149, config) < cosine_lr(10, config)


def test_single_epoch_uses_floor():
    config = TrainConfig(epochs=1, learning_rate=0.01)
    assert cosine_lr(0, config) == pytest.approx(0.0001)


@pytest.mark.parametrize(
    "overrides",
    [{"image_size": 100}, {"batch_size": 0}, {"epochs": 0}, {"momentum": 1.0}, {"precision": "float16"}],
)
def test_config_validation(overrides):
    with pytest.raises(ConfigError):
        TrainConfig(**overrides)


def test_fixed_batch_loss_decreases():
    model = tiny_model()
    optimizer = SGD(model.parameters())
    batch = tiny_samples(2)
    losses = [train_step(model, optimizer, batch, lr=0.01).total.item() for _ in range(50)]
    assert losses[-1] < losses[0]


def test_zero_learning_rate_leaves_weights_bitwise_unchanged():
    model = tiny_model()
    before = [p.data.copy() for p in model.parameters()]
    optimizer = SGD(model.parameters())
    for _ in range(3):
        train_step(model, optimizer, tiny_samples(2), lr=0.0)
    for old, parameter in zip(before, model.parameters()):
        assert old.tobytes() == parameter.data.tobytes()


def test_weight_decay_only_on_conv_weights():
    model = tiny_model()
    optimizer = SGD(model.parameters(), momentum=0.0, weight_decay=0.5)
    for parameter in model.parameters():
        parameter.grad = np.zeros_like(parameter.data)
    before = {id(p): p.data.copy() for p in model.parameters()}
    optimizer.step(1.0)
    for parameter in model.parameters():
        if parameter.ndim == 4:
            np.testing.assert_allclose(parameter.data, before[id(parameter)] * 0.5)
        else:
            np.testing.assert_array_equal(parameter.data, before[id(parameter)])


def test_same_seed_trains_identically(tmp_path):
    results = []
    for run in range(2):
        model = tiny_model(seed=1)
        result = train(model, tiny_samples(), tiny_config())
        path = save_weights(model, tmp_path / f"run{run}.bdrn")
        results.append((result.final_loss, path.read_bytes()))
    assert results[0][0] == results[1][0]
    assert results[0][1] == results[1][1]


def test_writes_jsonl_log_with_validation(tmp_path):
    samples = tiny_samples()
    log_path = tmp_path / "train_log.jsonl"
    result = train(tiny_model(), samples, tiny_config(epochs=3, eval_interval=2), validation=samples[:2], log_path=log_path)
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1, 2]
    assert set(records[0]["losses"]) == {"box", "objectness", "class", "total"}
    assert "metrics" not in records[0]
    assert "map50" in records[1]["metrics"] and "map50" in records[2]["metrics"]
    assert records[0]["steps"] == 2
    assert len(result.history) == 3


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(tiny_model(), [], tiny_config())


def test_image_size_mismatch_rejected():
    with pytest.raises(ConfigError):
        train(tiny_model(), tiny_samples(), tiny_config(image_size=96))


def test_divergence_reports_epoch(tmp_path):
    model = tiny_model()
    log_path = tmp_path / "log.jsonl"
    with pytest.raises(DivergenceError) as excinfo:
        train(model, tiny_samples(), tiny_config(learning_rate=1e30), log_path=log_path)
    assert excinfo.value.epoch in (0, 1)
    last = json.loads(log_path.read_text().splitlines()[-1])
    assert "diverged" in last


def test_divergence_leaves_weights_finite():
    model = tiny_model()
    with strict_mode(False):
        with pytest.raises(DivergenceError):
            train(model, tiny_samples(), tiny_config(learning_rate=1e30))
    assert all(np.all(np.isfinite(p.data)) for p in model.parameters())


def test_non_finite_gradient_updates_nothing():
    model = tiny_model()
    optimizer = SGD(model.parameters(), momentum=0.5)
    for parameter in model.parameters():
        parameter.grad = np.ones_like(parameter.data)
    optimizer.step(0.1)
    before = [p.data.copy() for p in model.parameters()]
    velocity = [v.copy() for v in optimizer.velocity]

    model.parameters()[-1].grad[0] = np.nan
    with pytest.raises(NonFiniteError, match="not finite"):
        optimizer.step(0.1)
    for old, parameter in zip(before, model.parameters()):
        np.testing.assert_array_equal(parameter.data, old)
    for old, current in zip(velocity, optimizer.velocity):
        np.testing.assert_array_equal(current, old)


@pytest.mark.slow
def test_desk_scale_overfit():
    spec = SceneSpec(image_size=160, min_scale=8, max_scale=64, seed=42)
    samples = generate_dataset(spec, 64, base_seed=42)
    config = TrainConfig(image_size=160, batch_size=16, epochs=300, learning_rate=0.01, flags=ablation_flags("m6"), seed=42)
    model = build_model(
        ModelConfig(image_size=160, in_channels=samples[0].channels, flags=config.flags), seed=42, dtype=config.dtype
    )
    result = train(model, samples, config, validation=samples)
    first, last = result.history[0].losses["total"], result.final_loss
    assert math.isfinite(last) and first / last >= 10.0
    assert result.history[-1].metrics["map50"] >= 0.90
