import argparse
import json
import logging
from pathlib import Path
from typing import Any, Optional, Sequence

from rich.console import Console

from engines.detector import Detector, build_model
from engines.postprocess import predict
from engines.trainer import VALIDATION_CONF
from engines.weights import load_weights
from programs.birdrone.config import RunConfig
from programs.birdrone.train import add_model_arguments, model_config
from programs.performance.timing import timed_inference
from tools.dataset.data import Detection, Sample, sample_id_type
from tools.dataset.storage import load_dataset
from tools.metrics.report import DEFAULT_CONF_THRESHOLD, MetricsReport, evaluate, render_table

logger = logging.getLogger(__name__)
console = Console()


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("eval", help="Evaluate weights (or stored predictions) on a split")
    parser.add_argument("--data", type=Path, required=True, help="Dataset directory")
    parser.add_argument("--weights", type=Path, help="BDRN1 weight file")
    parser.add_argument("--predictions", type=Path, help="JSON detections per sample id, instead of a model")
    parser.add_argument("--split", choices=["train", "val", "test"], default="test")
    parser.add_argument("--conf", type=float, default=DEFAULT_CONF_THRESHOLD, help="Confidence threshold")
    parser.add_argument("--iou", type=float, default=0.5, help="NMS IoU threshold")
    parser.add_argument("--no-timing", action="store_true", help="Skip the inference timing run")
    add_model_arguments(parser)
    parser.add_argument("--out", type=Path, default=Path("report.json"), help="Report JSON path")
    parser.set_defaults(handler=cmd_eval)
    return parser


def load_predictions(path: Path) -> dict[sample_id_type, list[Detection]]:
    records = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(records, dict):
        raise ValueError(f"{path}: expected an object mapping sample ids to detection lists")
    return {
        sample_id_type(str(sample_id)): [Detection.from_dict(record) for record in detections]
        for sample_id, detections in records.items()
    }


def load_model(config: RunConfig, weights: Path, in_channels: int) -> Detector:
    model = build_model(model_config(config.get("model"), config.get("image_size"), in_channels))
    return load_weights(model, weights)


def evaluate_model(
    model: Detector,
    samples: Sequence[Sample],
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    iou_threshold: float = 0.5,
    timing: bool = True,
) -> MetricsReport:
    predictions = predict(model, samples, VALIDATION_CONF, iou_threshold)
    report = evaluate(predictions, samples, model.num_classes, conf_threshold)
    if timing:
        report.ait_per_frame = timed_inference(model, samples, conf_threshold, iou_threshold).ait_per_frame
    return report


def write_report(report: MetricsReport, path: Path, extra: Optional[dict[str, Any]] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    document = report.to_dict()
    if extra:
        document.update(extra)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_eval(config: RunConfig) -> int:
    samples = load_dataset(config.get("data"), config.get("split"))
    if not samples:
        raise ValueError(f"split {config.get('split')!r} is empty")

    if config.get("predictions") is not None:
        predictions = load_predictions(Path(config.get("predictions")))
        report = evaluate(predictions, samples, conf_threshold=config.get("conf"))
    elif config.get("weights") is not None:
        model = load_model(config, Path(config.get("weights")), samples[0].channels)
        report = evaluate_model(
            model, samples, config.get("conf"), config.get("iou"), timing=not config.get("no_timing")
        )
    else:
        raise ValueError("eval needs --weights or --predictions")

    out = Path(config.get("out"))
    write_report(report, out, {"split": config.get("split")})
    config.write(out.parent)
    console.print(render_table(report, title=f"Evaluation on {config.get('split')}"))
    console.print(f"[bold]Report written to {out}[/bold]")
    return 0
