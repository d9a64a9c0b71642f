"""
BDRN1 weight files.

Layout, all integers unsigned 32-bit little-endian:
    b"BDRN1" | layer count
    per parameter, in census order:
        name length | name (utf-8) | rank | dims... | values (float32 little-endian, C order)

Values are stored as float32, so a float32 model round-trips bit-exactly.
"""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from engines.nn import Module, parameter_census

logger = logging.getLogger(__name__)

MAGIC = b"BDRN1"
_U32 = struct.Struct("<I")
_VALUE_DTYPE = np.dtype("<f4")


class WeightsFormatError(ValueError):
    """Raised when a file is not a well-formed BDRN1 weight file."""


class WeightsMismatchError(ValueError):
    """Raised when stored layers do not match the model's parameter census."""

    def __init__(self, missing: list[str], unexpected: list[str], reshaped: list[str]) -> None:
        self.missing = missing
        self.unexpected = unexpected
        self.reshaped = reshaped
        parts = []
        if missing:
            parts.append(f"missing {missing[:5]}{' ...' if len(missing) > 5 else ''}")
        if unexpected:
            parts.append(f"unexpected {unexpected[:5]}{' ...' if len(unexpected) > 5 else ''}")
        if reshaped:
            parts.append(f"shape mismatch {reshaped[:5]}{' ...' if len(reshaped) > 5 else ''}")
        super().__init__("weights do not match the architecture: " + "; ".join(parts))


def write_weights(stream: BinaryIO, layers: "OrderedDict[str, np.ndarray]") -> None:
    stream.write(MAGIC)
    stream.write(_U32.pack(len(layers)))
    for name, values in layers.items():
        encoded = name.encode("utf-8")
        stream.write(_U32.pack(len(encoded)))
        stream.write(encoded)
        stream.write(_U32.pack(values.ndim))
        for dim in values.shape:
            stream.write(_U32.pack(dim))
        stream.write(np.ascontiguousarray(values, dtype=_VALUE_DTYPE).tobytes())


def save_weights(model: Module, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layers = OrderedDict((name, p.data) for name, p in model.named_parameters())
    with path.open("wb") as stream:
        write_weights(stream, layers)
    logger.info("saved %d layers to %s", len(layers), path)
    return path


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    chunk = stream.read(size)
    if len(chunk) != size:
        raise WeightsFormatError(f"truncated file while reading {what}")
    return chunk


def _read_u32(stream: BinaryIO, what: str) -> int:
    return int(_U32.unpack(_read_exact(stream, _U32.size, what))[0])


def read_weights(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    """Layers in file order as float32 arrays."""
    layers: "OrderedDict[str, np.ndarray]" = OrderedDict()
    with Path(path).open("rb") as stream:
        if stream.read(len(MAGIC)) != MAGIC:
            raise WeightsFormatError(f"{path} is not a BDRN1 weight file")
        count = _read_u32(stream, "layer count")
        for _ in range(count):
            length = _read_u32(stream, "name length")
            try:
                name = _read_exact(stream, length, "layer name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise WeightsFormatError(f"layer name is not utf-8: {exc}") from exc
            rank = _read_u32(stream, f"rank of {name}")
            shape = tuple(_read_u32(stream, f"dims of {name}") for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64))
            raw = _read_exact(stream, size * _VALUE_DTYPE.itemsize, f"values of {name}")
            if name in layers:
                raise WeightsFormatError(f"duplicate layer {name!r}")
            layers[name] = np.frombuffer(raw, dtype=_VALUE_DTYPE).reshape(shape).copy()
        if stream.read(1):
            raise WeightsFormatError("trailing bytes after the last layer")
    return layers


def load_weights(model: Module, path: Union[str, Path]) -> Module:
    """Copy stored values into `model` after checking names and shapes against its census."""
    layers = read_weights(path)
    census = parameter_census(model)
    missing = [name for name in census if name not in layers]
    unexpected = [name for name in layers if name not in census]
    reshaped = [
        f"{name}: {layers[name].shape} vs {shape}"
        for name, shape in census.items()
        if name in layers and layers[name].shape != shape
    ]
    if missing or unexpected or reshaped:
        raise WeightsMismatchError(missing, unexpected, reshaped)

    for name, parameter in model.named_parameters():
        parameter.data = np.ascontiguousarray(layers[name].astype(parameter.dtype))
        parameter.grad = None
    logger.info("loaded %d layers from %s", len(layers), path)
    return model
