import argparse
import logging
from pathlib import Path

from rich.console import Console

from programs.birdrone.config import RunConfig
from programs.birdrone.tables import census_table
from tools.dataset.generator import SceneSpec, generate_dataset
from tools.dataset.splits import SPLIT_NAMES, split_dataset
from tools.dataset.stats import dataset_stats
from tools.dataset.storage import save_dataset

logger = logging.getLogger(__name__)
console = Console()


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("generate", help="Generate a synthetic bird/drone dataset")
    parser.add_argument("--out", type=Path, required=True, help="Output dataset directory")
    parser.add_argument("--count", type=int, default=100, help="Number of scenes")
    parser.add_argument("--seed", type=int, default=0, help="Base seed; scene k uses seed + k")
    parser.add_argument("--image-size", type=int, default=160, help="Square image size in pixels")
    parser.add_argument("--small-bias", type=float, default=0.5, help="Probability of a small-object scale")
    parser.add_argument("--min-scale", type=float, default=6.0, help="Smallest object scale (px)")
    parser.add_argument("--max-scale", type=float, default=64.0, help="Largest object scale (px)")
    parser.add_argument("--min-objects", type=int, default=1)
    parser.add_argument("--max-objects", type=int, default=4)
    parser.add_argument("--bird-probability", type=float, default=0.5)
    parser.add_argument("--channels", type=int, choices=[1, 3], default=1)
    parser.add_argument(
        "--ratios", type=str, default="0.7,0.2,0.1", help="train,val,test ratios summing to 1"
    )
    parser.add_argument("--format", choices=["ppm", "png"], default="ppm", help="Image file format")
    parser.add_argument("--force", action="store_true", help="Write into a non-empty directory")
    parser.set_defaults(handler=cmd_generate)
    return parser


def parse_ratios(text: str) -> tuple[float, ...]:
    try:
        ratios = tuple(float(part) for part in text.split(","))
    except ValueError:
        raise ValueError(f"ratios must be comma-separated numbers, got {text!r}") from None
    if len(ratios) != len(SPLIT_NAMES):
        raise ValueError(f"expected {len(SPLIT_NAMES)} ratios, got {len(ratios)}")
    return ratios


def cmd_generate(config: RunConfig) -> int:
    spec = SceneSpec(
        image_size=config.get("image_size"),
        min_objects=config.get("min_objects"),
        max_objects=config.get("max_objects"),
        bird_probability=config.get("bird_probability"),
        min_scale=config.get("min_scale"),
        max_scale=config.get("max_scale"),
        small_bias=config.get("small_bias"),
        channels=config.get("channels"),
        seed=config.get("seed"),
    )
    ratios = parse_ratios(config.get("ratios"))
    samples = generate_dataset(spec, config.get("count"), spec.seed, config.threads)
    parts = split_dataset(samples, ratios, seed=spec.seed)

    out = Path(config.get("out"))
    save_dataset(
        out,
        samples,
        dict(zip(SPLIT_NAMES, parts)),
        force=config.get("force"),
        image_suffix=f".{config.get('format')}",
    )
    config.write(out)
    console.print(census_table(dataset_stats(samples)))
    console.print(
        f"[bold]Wrote [green]{len(samples)}[/green] scenes to {out}[/bold] "
        + " / ".join(f"{name} {len(part)}" for name, part in zip(SPLIT_NAMES, parts))
    )
    return 0
