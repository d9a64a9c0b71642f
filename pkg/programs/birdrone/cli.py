"""
birdrone command line.

    birdrone generate --out data/ --count 64 --seed 42
    birdrone train --data data/ --model m6 --epochs 300 --out runs/m6
    birdrone eval --data data/ --weights runs/m6/weights.bdrn --out runs/m6/report.json
    birdrone infer --weights runs/m6/weights.bdrn --image data/images/000000.ppm --out boxes.png
    birdrone gradcheck --module all
    birdrone ablate --data data/ --epochs 100 --out runs/ablation
    birdrone logs runs/m6/train_log.jsonl

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 gradcheck failure.
"""

import argparse
import logging
import sys
from typing import NoReturn, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape

from engines.nn import ConfigError
from programs.birdrone import ablate, evaluate, generate, gradcheck, render, train
from programs.birdrone.config import RunConfig, apply_config_file, parse_config_file
from programs.observability_cli import log_stats

logger = logging.getLogger(__name__)
err_console = Console(stderr=True)

USAGE_ERROR = 1
RUNTIME_ERROR = 2
COMMANDS = (generate, train, evaluate, render, gradcheck, ablate, log_stats)


class UsageError(Exception):
    """Raised in place of argparse's print-and-exit on bad arguments."""


class BirdroneArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = BirdroneArgumentParser(
        prog="birdrone",
        description="Small-object bird/drone detection on a numpy autograd engine",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging verbosity",
    )
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (else BDRN_THREADS, else 1)")
    parser.add_argument("--config", default=None, help="key = value file; flags override it")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")
    for module in COMMANDS:
        module.add_parser(subparsers)
    # aliases map to the same subparser
    return parser, dict(subparsers.choices)


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


def _config_path(argv: Sequence[str]) -> Optional[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    return known.config


def parse_run_config(argv: Sequence[str]) -> tuple[RunConfig, argparse.Namespace]:
    parser, commands = build_parser()
    config_path = _config_path(argv)
    if config_path is not None:
        values = parse_config_file(config_path)
        command = next((token for token in argv if token in commands), None)
        owners = [parser] + ([commands[command]] if command is not None else [])
        apply_config_file(owners, values)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip() + "\nbirdrone: a command is required")
    if args.threads is not None and args.threads < 1:
        raise UsageError(f"--threads must be positive, got {args.threads}")
    return RunConfig.from_namespace(args), args


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config, args = parse_run_config(argv)
    except (UsageError, ConfigError) as e:
        err_console.print(f"[red]{escape(str(e))}[/red]")
        return USAGE_ERROR
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    setup_logging(args.log_level)
    logger.debug("resolved config: %s", config.to_dict())
    try:
        return int(args.handler(config))
    except ConfigError as e:
        err_console.print(f"[red]Configuration error: {escape(str(e))}[/red]")
        return USAGE_ERROR
    except KeyboardInterrupt:
        err_console.print("[red]Interrupted[/red]")
        return RUNTIME_ERROR
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        err_console.print(f"[red]Error: {escape(str(e))}[/red]")
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
