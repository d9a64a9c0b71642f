import argparse
import json
import logging
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from rich.console import Console

from engines.backbone import ABLATION_MODELS
from engines.trainer import TrainConfig
from programs.birdrone.config import RunConfig
from programs.birdrone.evaluate import evaluate_model, write_report
from programs.birdrone.tables import ablation_table, render
from programs.birdrone.train import run_training
from tools.dataset.data import Sample
from tools.dataset.storage import available_splits, load_dataset
from tools.metrics.report import DEFAULT_CONF_THRESHOLD

logger = logging.getLogger(__name__)
console = Console()

REPORT_FILE = "ablation.json"
TABLE_FILE = "ablation.txt"
RUNTIME_FAILURE = 2
DELTA_KEYS = ("precision", "recall", "map50", "map50_95", "accuracy", "fn_percent", "fp_percent")


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("ablate", help="Train and evaluate M1-M6 on the same data")
    parser.add_argument("--data", type=Path, required=True, help="Dataset directory")
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--lr", type=float, default=0.01, help="Initial learning rate")
    parser.add_argument("--batch", type=int, default=16, help="Batch size")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--image-size", type=int, default=160)
    parser.add_argument("--precision", choices=["float32", "float64"], default="float32")
    parser.add_argument("--eval-split", choices=["val", "test"], default="test")
    parser.add_argument("--conf", type=float, default=DEFAULT_CONF_THRESHOLD, help="Confidence threshold")
    parser.add_argument("--models", default=",".join(ABLATION_MODELS), help="Comma-separated subset of m1..m6")
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.set_defaults(handler=cmd_ablate)
    return parser


def run_model(
    name: str,
    train_samples: Sequence[Sample],
    eval_samples: Sequence[Sample],
    settings: TrainConfig,
    out: Path,
) -> dict[str, Any]:
    """One ablation row. Failures are recorded on the row instead of raised."""
    row: dict[str, Any] = {"model": name, "flags": asdict(ABLATION_MODELS[name]), "metrics": None}
    started = time.perf_counter()
    try:
        model, result = run_training(name, train_samples, None, replace(settings, flags=ABLATION_MODELS[name]), out)
        report = evaluate_model(model, eval_samples, settings.conf_threshold, settings.iou_threshold, timing=False)
        write_report(report, out / "report.json")
        row["metrics"] = report.metrics_dict()
        row["final_loss"] = result.final_loss
    except Exception as exc:
        logger.exception("ablation model %s failed", name)
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["seconds"] = time.perf_counter() - started
    return row


def metric_deltas(rows: Sequence[dict[str, Any]], base: str = "m1", target: str = "m6") -> Optional[dict[str, float]]:
    by_name = {row["model"]: row.get("metrics") for row in rows}
    if by_name.get(base) is None or by_name.get(target) is None:
        return None
    return {
        key: by_name[target][key] - by_name[base][key]
        for key in DELTA_KEYS
        if by_name[target][key] is not None and by_name[base][key] is not None
    }


def parse_models(text: str) -> list[str]:
    names = [part.strip().lower() for part in text.split(",") if part.strip()]
    unknown = [name for name in names if name not in ABLATION_MODELS]
    if unknown or not names:
        raise ValueError(f"unknown models {unknown}; valid options: {', '.join(ABLATION_MODELS)}")
    return names


def cmd_ablate(config: RunConfig) -> int:
    data = Path(config.get("data"))
    out = Path(config.get("out"))
    split = config.get("eval_split")
    if split not in available_splits(data):
        raise ValueError(f"{data} has no {split} split")
    train_samples = load_dataset(data, "train")
    eval_samples = load_dataset(data, split)
    settings = TrainConfig(
        image_size=config.get("image_size"),
        batch_size=config.get("batch"),
        epochs=config.get("epochs"),
        learning_rate=config.get("lr"),
        seed=config.get("seed"),
        precision=config.get("precision"),
        eval_interval=config.get("epochs"),
        conf_threshold=config.get("conf"),
    )
    out.mkdir(parents=True, exist_ok=True)
    config.write(out)

    rows = []
    for name in parse_models(config.get("models")):
        logger.info("ablation: training %s for %d epochs", name.upper(), settings.epochs)
        rows.append(run_model(name, train_samples, eval_samples, settings, out / name))

    deltas = metric_deltas(rows)
    if deltas is not None:
        logger.info("M6 - M1: %s", ", ".join(f"{k} {v:+.4f}" for k, v in deltas.items()))
    document = {"split": split, "epochs": settings.epochs, "seed": settings.seed, "rows": rows, "m6_minus_m1": deltas}
    (out / REPORT_FILE).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    table = ablation_table(rows, title=f"Ablation on {split} ({settings.epochs} epochs)")
    (out / TABLE_FILE).write_text(render(table), encoding="utf-8")
    console.print(table)
    failed = [row["model"] for row in rows if row.get("metrics") is None]
    if failed:
        console.print(f"[bold red]failed: {', '.join(failed)}[/bold red]")
        return RUNTIME_FAILURE
    return 0
