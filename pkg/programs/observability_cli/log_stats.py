import argparse
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from programs.birdrone.config import RunConfig

from . import log_parser

console = Console()


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("logs", help="Summarize a train_log.jsonl")
    parser.add_argument("log_file", type=Path, help="Path to a training log")
    parser.add_argument(
        "--points", "-n", type=int, default=10, help="Loss curve samples to show"
    )
    parser.set_defaults(handler=cmd_logs)
    return parser


def _loss_panel(curve: list[tuple[int, float]], points: int) -> Panel:
    # Create loss panel with simple bars
    lines: list[str] = []
    samples = log_parser.sample_curve(curve, points)
    peak = max(value for _, value in samples)
    bar_width = 40
    for epoch, value in samples:
        filled_width = int((value / peak) * bar_width) if peak > 0 else 0
        bar = f"[{'=' * filled_width}{' ' * (bar_width - filled_width)}]"
        lines.append(f"epoch {epoch + 1:>4} {bar} {value:.5f}")
    return Panel("\n".join(lines), title="📉 Total loss", expand=False)


def generate_stats(log_file: Path, points: int = 10) -> dict[str, Any]:
    logs = log_parser.load_logs(log_file)
    console.print(f"[bold]Loaded [green]{len(logs)}[/green] log records[/bold]")
    metrics = log_parser.calculate_metrics(logs)

    # Header
    header_text: Text = Text()
    header_text.append("\n📊 Training Summary\n", style="bold blue")
    header_text.append(f"Epochs logged: {metrics['epochs']}", style="green")
    console.print(header_text)

    curve = log_parser.loss_curve(logs)
    if curve:
        console.print(_loss_panel(curve, points))

    # Validation metrics table
    if metrics["best"]:
        best_table = Table(title="🏁 Best validation metrics", show_header=True, header_style="bold")
        best_table.add_column("Metric", style="dim")
        best_table.add_column("Value", justify="right")
        best_table.add_column("Epoch", justify="right")
        for key, best in metrics["best"].items():
            best_table.add_row(key, f"{best['value']:.4f}", str(best["epoch"] + 1))
        console.print(best_table)

    if metrics["divergences"]:
        errors_text = "\n".join(
            f"[red]epoch {d['epoch'] + 1}:[/red] {escape(str(d['detail']))}" for d in metrics["divergences"]
        )
        console.print(
            Panel(errors_text, title=f"🔴 Divergences ({len(metrics['divergences'])} total)", style="red")
        )

    # Summary footer
    console.print("\n[bold blue]📝 Summary:[/bold blue]")
    if curve:
        console.print(f"• Loss: {metrics['first_loss']:.5f} -> {metrics['final_loss']:.5f}")
        if metrics["loss_reduction"] is not None:
            console.print(f"• Reduction: {metrics['loss_reduction']:.1f}x")
        console.print(f"• Final learning rate: {metrics['final_lr']:.6f}")
    else:
        console.print("• No epoch records")
    return metrics


def cmd_logs(config: RunConfig) -> int:
    log_file = Path(config.get("log_file"))
    if not log_file.is_file():
        raise FileNotFoundError(f"log file not found: {log_file}")
    generate_stats(log_file, config.get("points"))
    return 0
