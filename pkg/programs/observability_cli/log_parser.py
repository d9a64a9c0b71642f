import json
import math
from pathlib import Path

# types
from typing import Any, List, NewType, Optional, Union

log_dict_type = NewType("log_dict_type", dict[str, Any])


def load_logs(file_path: Union[str, Path]) -> List[log_dict_type]:
    """Load and parse a JSONL training log, skipping malformed lines."""
    logs: list[log_dict_type] = []
    with open(file_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if isinstance(record, dict) and "epoch" in record:
                    logs.append(log_dict_type(record))
    return logs


def epoch_records(logs: List[log_dict_type]) -> List[log_dict_type]:
    return [log for log in logs if "losses" in log]


def divergences(logs: List[log_dict_type]) -> List[log_dict_type]:
    return [log for log in logs if "diverged" in log]


def loss_curve(logs: List[log_dict_type], key: str = "total") -> list[tuple[int, float]]:
    return [
        (int(log["epoch"]), float(log["losses"][key]))
        for log in epoch_records(logs)
        if key in log.get("losses", {})
    ]


def sample_curve(curve: list[tuple[int, float]], points: int = 10) -> list[tuple[int, float]]:
    """At most `points` evenly spaced entries, always keeping the first and last."""
    if len(curve) <= points:
        return curve
    if points < 2:
        return curve[-1:]
    step = (len(curve) - 1) / (points - 1)
    return [curve[round(k * step)] for k in range(points)]


def _best(logs: List[log_dict_type], key: str) -> Optional[tuple[int, float]]:
    values = [
        (int(log["epoch"]), float(log["metrics"][key]))
        for log in logs
        if log.get("metrics") and log["metrics"].get(key) is not None
    ]
    if not values:
        return None
    # earliest epoch wins ties
    return max(values, key=lambda item: (item[1], -item[0]))


def calculate_metrics(logs: List[log_dict_type]) -> dict[str, Any]:
    """Summary of a training log: epochs, loss reduction, best validation metrics, divergences."""
    records = epoch_records(logs)
    curve = loss_curve(logs)
    metrics: dict[str, Any] = {
        "total_records": len(logs),
        "epochs": len(records),
        "first_loss": curve[0][1] if curve else None,
        "final_loss": curve[-1][1] if curve else None,
        "best_loss": min((value for _, value in curve), default=None),
        "loss_reduction": None,
        "final_lr": records[-1]["lr"] if records else None,
        "best": {},
        "divergences": [
            {"epoch": log["epoch"], "detail": log["diverged"]} for log in divergences(logs)
        ],
    }

    # Loss reduction factor
    if curve and curve[-1][1] > 0 and math.isfinite(curve[0][1]):
        metrics["loss_reduction"] = curve[0][1] / curve[-1][1]

    # Best validation metrics
    for key in ("map50", "map50_95", "precision", "recall", "accuracy"):
        best = _best(records, key)
        if best is not None:
            metrics["best"][key] = {"epoch": best[0], "value": best[1]}

    return metrics
