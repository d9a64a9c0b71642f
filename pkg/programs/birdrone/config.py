"""
Run configuration for the birdrone commands:
- flat `key = value` config files (`#` comments, keys with `-` or `_`)
- precedence: command-line flags > config file > defaults
- BDRN_THREADS as the --threads fallback, loaded through .env
- resolved_config.json echoed into every output directory
"""

import argparse
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import dotenv

from engines.nn import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "BDRN_THREADS"
RESOLVED_CONFIG = "resolved_config.json"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"{path}:{line_number}: expected `key = value`, got {line.strip()!r}")
        key, value = (part.strip() for part in content.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{line_number}: empty key")
        values[key.replace("-", "_")] = value
    return values


def _convert(action: argparse.Action, key: str, raw: str) -> Any:
    if action.nargs == 0:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        value = action.type(raw) if callable(action.type) else raw
    except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError(f"{key}: {exc}") from None
    if action.choices is not None and value not in action.choices:
        raise ConfigError(f"{key}: {value!r} is not one of {list(action.choices)}")
    return value


def apply_config_file(
    parsers: Sequence[argparse.ArgumentParser], values: dict[str, str]
) -> None:
    """Install file values as defaults on whichever parser owns each key."""
    owners: dict[str, tuple[argparse.ArgumentParser, argparse.Action]] = {}
    for parser in parsers:
        for action in parser._actions:
            if action.dest not in ("help", "command", "config", argparse.SUPPRESS):
                owners[action.dest] = (parser, action)
    unknown = sorted(set(values) - set(owners))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, raw in values.items():
        parser, action = owners[key]
        parser.set_defaults(**{key: _convert(action, key, raw)})
        # a value from the file satisfies a required flag
        action.required = False


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any] = field(default_factory=dict)
    threads: int = 1
    config_file: Optional[str] = None

    @classmethod
    def load_from_env(cls) -> Optional[int]:
        """Thread count from BDRN_THREADS (after loading .env), if set."""
        dotenv.load_dotenv(override=False)
        raw = os.getenv(THREADS_ENV)
        if raw is None or not raw.strip():
            return None
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be positive, got {threads}")
        return threads

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> "RunConfig":
        values = {k: v for k, v in vars(args).items() if k not in ("handler", "command", "threads", "config")}
        threads = args.threads if args.threads is not None else cls.load_from_env() or 1
        return cls(args.command, values, threads, args.config)

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def to_dict(self) -> dict[str, Any]:
        values = {k: str(v) if isinstance(v, Path) else v for k, v in self.values.items()}
        return {"command": self.command, "threads": self.threads, "config_file": self.config_file, **values}

    def write(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / RESOLVED_CONFIG
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.debug("wrote %s", path)
        return path
