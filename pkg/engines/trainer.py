"""
Training loop: seeded shuffling, SGD with momentum, cosine learning-rate
decay, a JSON Lines epoch log and optional validation metrics.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from engines.backbone import AblationFlags
from engines.detector import Detector
from engines.loss import LossBreakdown, LossWeights, compute_loss
from engines.nn import ConfigError, Parameter
from engines.postprocess import predict
from engines.targets import build_batch_targets
from tools.dataset.data import Sample
from tools.metrics.report import evaluate
from tools.tensor.ops import to_tensor
from tools.tensor.tensor import NonFiniteError, Tape

logger = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}
# validation runs decode with a low threshold so AP sees the whole curve
VALIDATION_CONF = 0.001


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, detail: str = "") -> None:
        self.epoch = epoch
        message = f"training diverged at epoch {epoch}"
        super().__init__(f"{message}: {detail}" if detail else message)


@dataclass
class TrainConfig:
    image_size: int = 160
    batch_size: int = 16
    epochs: int = 300
    learning_rate: float = 0.01
    final_lr_fraction: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    flags: AblationFlags = field(default_factory=AblationFlags)
    precision: str = "float32"
    eval_interval: int = 10
    conf_threshold: float = 0.25
    iou_threshold: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if self.image_size <= 0 or self.image_size % 32:
            raise ConfigError(f"image size {self.image_size} must be a positive multiple of 32")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_interval < 1:
            raise ConfigError("batch_size, epochs and eval_interval must be positive")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self) -> Any:
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Cosine decay from learning_rate at epoch 0 to final_lr_fraction of it at the last epoch."""
    floor = config.learning_rate * config.final_lr_fraction
    progress = epoch / (config.epochs - 1) if config.epochs > 1 else 1.0
    return floor + (config.learning_rate - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class SGD:
    """Heavy-ball momentum; weight decay applies to convolution weights only."""

    def __init__(self, parameters: Sequence[Parameter], momentum: float = 0.9, weight_decay: float = 5e-4) -> None:
        self.parameters = list(parameters)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.parameters]

    def step(self, lr: float) -> None:
        """
        Update every parameter that has a gradient. Nothing is written unless
        all new velocities and values are finite.
        """
        updates = []
        for k, parameter in enumerate(self.parameters):
            if parameter.grad is None:
                continue
            grad = parameter.grad
            if self.weight_decay and parameter.ndim == 4:
                grad = grad + self.weight_decay * parameter.data
            velocity = self.momentum * self.velocity[k] + grad
            data = parameter.data - lr * velocity
            if not (np.all(np.isfinite(velocity)) and np.all(np.isfinite(data))):
                raise NonFiniteError(f"update of parameter {k} (shape {parameter.shape}) is not finite")
            updates.append((k, velocity, data))
        for k, velocity, data in updates:
            self.velocity[k] = velocity
            self.parameters[k].data = data

    def zero_grad(self) -> None:
        for parameter in self.parameters:
            parameter.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    steps: int
    losses: dict[str, float]
    metrics: Optional[dict[str, Any]] = None

    def to_dict(self) -> dict[str, Any]:
        record: dict[str, Any] = {"epoch": self.epoch, "lr": self.lr, "steps": self.steps, "losses": self.losses}
        if self.metrics is not None:
            record["metrics"] = self.metrics
        return record


@dataclass
class TrainResult:
    model: Detector
    history: list[EpochRecord]

    @property
    def final_loss(self) -> float:
        return self.history[-1].losses["total"]


def train_step(
    model: Detector,
    optimizer: SGD,
    batch: Sequence[Sample],
    lr: float,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """
    One forward/backward/update on `batch`; returns the loss before the update.
    A non-finite loss raises NonFiniteError before any gradient is applied.
    """
    image_size = model.config.image_size
    images = to_tensor([sample.image for sample in batch], dtype=model.dtype)
    targets = build_batch_targets([sample.labels for sample in batch], image_size, model.strides)
    with Tape() as tape:
        breakdown = compute_loss(model(images), targets, image_size, weights)
    total = float(breakdown.total.item())
    if not math.isfinite(total):
        raise NonFiniteError(f"loss is {total}")
    tape.backward(breakdown.total)
    optimizer.step(lr)
    optimizer.zero_grad()
    return breakdown


def _append_jsonl(path: Path, record: dict[str, Any]) -> None:
    with path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(record) + "\n")


def _diverged(log_file: Optional[Path], epoch: int, detail: str) -> DivergenceError:
    if log_file is not None:
        _append_jsonl(log_file, {"epoch": epoch, "diverged": detail})
    return DivergenceError(epoch, detail)


def train(
    model: Detector,
    dataset: Sequence[Sample],
    config: TrainConfig,
    validation: Optional[Sequence[Sample]] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Train in place. Epoch order is drawn from a generator seeded with
    `config.seed`; a non-finite loss raises DivergenceError with the epoch.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    if model.config.image_size != config.image_size:
        raise ConfigError(f"model image size {model.config.image_size} != config {config.image_size}")
    log_file = Path(log_path) if log_path is not None else None
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        log_file.write_text("", encoding="utf-8")

    rng = np.random.default_rng(config.seed)
    optimizer = SGD(model.parameters(), config.momentum, config.weight_decay)
    history: list[EpochRecord] = []

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = cosine_lr(epoch, config)
        order = rng.permutation(len(dataset))
        sums = {"box": 0.0, "objectness": 0.0, "class": 0.0, "total": 0.0}
        steps = 0
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[k] for k in order[start : start + config.batch_size]]
            try:
                breakdown = train_step(model, optimizer, batch, lr, config.loss_weights)
            except NonFiniteError as exc:
                raise _diverged(log_file, epoch, str(exc)) from exc
            for key, value in breakdown.as_dict().items():
                sums[key] += value
            steps += 1

        record = EpochRecord(epoch=epoch, lr=lr, steps=steps, losses={k: v / steps for k, v in sums.items()})
        last = epoch == config.epochs - 1
        if validation and ((epoch + 1) % config.eval_interval == 0 or last):
            predictions = predict(model, validation, VALIDATION_CONF, config.iou_threshold, config.batch_size)
            report = evaluate(predictions, validation, model.num_classes, config.conf_threshold)
            record.metrics = report.metrics_dict()
        history.append(record)
        if log_file is not None:
            _append_jsonl(log_file, record.to_dict())
        logger.info(
            "epoch %d/%d lr %.5f loss %.5f (%.1fs)",
            epoch + 1,
            config.epochs,
            lr,
            record.losses["total"],
            time.perf_counter() - started,
        )
    return TrainResult(model, history)
