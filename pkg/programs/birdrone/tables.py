import io
from typing import Any, Optional, Sequence

from rich.console import Console
from rich.table import Table

from tools.dataset.data import CLASS_NAMES, SizeBin
from tools.dataset.stats import DatasetCensus

ABLATION_COLUMNS = (
    "Model",
    "AELAN",
    "MPDA",
    "RMPDA",
    "P",
    "R",
    "mAP@0.5",
    "mAP@0.5:0.95",
    "Accuracy %",
    "FN %",
    "FP %",
    "Wall-clock (s)",
)


def render(*tables: Table, width: int = 140) -> str:
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, color_system=None)
    for table in tables:
        console.print(table)
    return buffer.getvalue()


def census_table(census: DatasetCensus, title: str = "Dataset census") -> Table:
    table = Table(title=title, show_header=True, header_style="bold")
    table.add_column("Total images", justify="right")
    for name in CLASS_NAMES:
        table.add_column(f"{name.capitalize()}s", justify="right")
    for size_bin in SizeBin:
        table.add_column(size_bin.value.replace("_", " ").capitalize(), justify="right")
    for name in CLASS_NAMES:
        table.add_column(f"Smallest {name}", justify="right")

    def smallest(name: str) -> str:
        size = census.smallest.get(name)
        return "-" if size is None else f"{size[0]:g}x{size[1]:g}"

    table.add_row(
        str(census.images),
        *(str(census.per_class.get(name, 0)) for name in CLASS_NAMES),
        *(str(census.per_bin[b.value]) for b in SizeBin),
        *(smallest(name) for name in CLASS_NAMES),
    )
    return table


def _mark(flag: bool) -> str:
    return "yes" if flag else "no"


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def ablation_table(rows: Sequence[dict[str, Any]], title: str = "Ablation") -> Table:
    """Rows carry model, flags, metrics (or error) and seconds."""
    table = Table(title=title, show_header=True, header_style="bold")
    for column in ABLATION_COLUMNS:
        table.add_column(column, justify="left" if column == "Model" else "right")
    for row in rows:
        flags = row["flags"]
        metrics = row.get("metrics")
        if metrics is None:
            values = ["failed"] + ["-"] * 6
        else:
            values = [
                _fmt(metrics["precision"]),
                _fmt(metrics["recall"]),
                _fmt(metrics["map50"]),
                _fmt(metrics["map50_95"]),
                _fmt(metrics["accuracy"], 2),
                _fmt(metrics["fn_percent"], 2),
                _fmt(metrics["fp_percent"], 2),
            ]
        table.add_row(
            row["model"].upper(),
            _mark(flags["aelan"]),
            _mark(flags["mpda"]),
            _mark(flags["rmpda"]),
            *values,
            _fmt(row.get("seconds"), 1),
        )
    return table


def gradcheck_table(results: Sequence[tuple[str, float, float]]) -> Table:
    table = Table(title="Gradient checks (float64)", show_header=True, header_style="bold")
    table.add_column("Module", style="dim")
    table.add_column("Max relative error", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Status")
    for name, error, tolerance in results:
        table.add_row(name, f"{error:.3e}", f"{tolerance:.0e}", "ok" if error < tolerance else "FAILED")
    return table
