import argparse
import logging
from pathlib import Path
from typing import Optional, Sequence

from rich.console import Console

from engines.backbone import ABLATION_MODELS, ModelConfig, ablation_flags
from engines.detector import Detector, build_model
from engines.nn import ConfigError
from engines.trainer import TrainConfig, TrainResult, train
from engines.weights import save_weights
from programs.birdrone.config import RunConfig
from tools.dataset.data import Sample
from tools.dataset.storage import available_splits, load_dataset

logger = logging.getLogger(__name__)
console = Console()

WEIGHTS_FILE = "weights.bdrn"
LOG_FILE = "train_log.jsonl"


def model_choice(name: str) -> str:
    try:
        ablation_flags(name)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return name.lower()


def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--model",
        type=model_choice,
        default="m6",
        help=f"Ablation model, one of {', '.join(ABLATION_MODELS)}",
    )
    parser.add_argument("--image-size", type=int, default=160, help="Square input size in pixels")


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("train", help="Train one ablation model")
    parser.add_argument("--data", type=Path, required=True, help="Dataset directory")
    add_model_arguments(parser)
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--lr", type=float, default=0.01, help="Initial learning rate")
    parser.add_argument("--batch", type=int, default=16, help="Batch size")
    parser.add_argument("--momentum", type=float, default=0.9)
    parser.add_argument("--seed", type=int, default=0, help="Seed for weights and shuffling")
    parser.add_argument("--precision", choices=["float32", "float64"], default="float32")
    parser.add_argument("--eval-interval", type=int, default=10, help="Validate every N epochs")
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.set_defaults(handler=cmd_train)
    return parser


def model_config(name: str, image_size: int, in_channels: int) -> ModelConfig:
    return ModelConfig(image_size=image_size, in_channels=in_channels, flags=ablation_flags(name))


def train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        image_size=config.get("image_size"),
        batch_size=config.get("batch"),
        epochs=config.get("epochs"),
        learning_rate=config.get("lr"),
        momentum=config.get("momentum"),
        seed=config.get("seed"),
        flags=ablation_flags(config.get("model")),
        precision=config.get("precision"),
        eval_interval=config.get("eval_interval"),
    )


def run_training(
    name: str,
    train_samples: Sequence[Sample],
    validation: Optional[Sequence[Sample]],
    settings: TrainConfig,
    out: Path,
) -> tuple[Detector, TrainResult]:
    """Build, train and save one model into `out`."""
    if not train_samples:
        raise ValueError("the training split is empty")
    out.mkdir(parents=True, exist_ok=True)
    config = model_config(name, settings.image_size, train_samples[0].channels)
    model = build_model(config, seed=settings.seed, dtype=settings.dtype)
    result = train(model, train_samples, settings, validation=validation, log_path=out / LOG_FILE)
    save_weights(model, out / WEIGHTS_FILE)
    return model, result


def cmd_train(config: RunConfig) -> int:
    data = Path(config.get("data"))
    out = Path(config.get("out"))
    settings = train_config(config)
    train_samples = load_dataset(data, "train")
    validation = load_dataset(data, "val") if "val" in available_splits(data) else None
    out.mkdir(parents=True, exist_ok=True)
    config.write(out)

    _, result = run_training(config.get("model"), train_samples, validation, settings, out)
    first, last = result.history[0].losses["total"], result.final_loss
    console.print(
        f"[bold]{config.get('model').upper()}[/bold] trained {settings.epochs} epochs: "
        f"loss {first:.4f} -> {last:.4f}; weights in {out / WEIGHTS_FILE}"
    )
    return 0
