"""
Image files. Binary PPM (P5 gray, P6 RGB) is written directly; PNG and any
other format Pillow understands goes through Pillow. Arrays are (C, H, W)
floats holding 8-bit levels k / 255, so save -> load is exact.
"""

from pathlib import Path
from typing import Any, Union

import numpy as np
from numpy.typing import NDArray
from PIL import Image, UnidentifiedImageError

PPM_SUFFIXES = {".ppm", ".pgm", ".pnm"}


class ImageFormatError(ValueError):
    """Raised when an image file cannot be read."""


def to_uint8(image: NDArray[Any]) -> NDArray[np.uint8]:
    """(C, H, W) floats in [0, 1] -> (H, W) or (H, W, 3) bytes."""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ImageFormatError(f"expected (1|3, H, W) image, got shape {image.shape}")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return pixels[0] if pixels.shape[0] == 1 else np.ascontiguousarray(pixels.transpose(1, 2, 0))


def from_uint8(pixels: NDArray[np.uint8]) -> NDArray[np.float64]:
    planes = pixels[None] if pixels.ndim == 2 else pixels.transpose(2, 0, 1)
    return planes.astype(np.float64) / 255.0


def write_ppm(path: Union[str, Path], image: NDArray[Any]) -> None:
    pixels = to_uint8(image)
    magic = b"P5" if pixels.ndim == 2 else b"P6"
    height, width = pixels.shape[:2]
    with Path(path).open("wb") as handle:
        handle.write(magic + f"\n{width} {height}\n255\n".encode("ascii"))
        handle.write(pixels.tobytes())


def _ppm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    position = 0
    while len(tokens) < count:
        while position < len(data) and data[position : position + 1].isspace():
            position += 1
        if data[position : position + 1] == b"#":
            while position < len(data) and data[position : position + 1] != b"\n":
                position += 1
            continue
        start = position
        while position < len(data) and not data[position : position + 1].isspace():
            position += 1
        if start == position:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:position])
    # exactly one whitespace byte separates the header from the raster
    return tokens, position + 1


def read_ppm(path: Union[str, Path]) -> NDArray[np.float64]:
    data = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(data, 4)
    magic = tokens[0]
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PPM header") from None
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit binary P5/P6 files are supported")
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    if len(data) - offset < expected:
        raise ImageFormatError(f"{path}: raster shorter than {width}x{height}x{channels}")
    raster = np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return from_uint8(raster.reshape(shape))


def save_image(path: Union[str, Path], image: NDArray[Any]) -> Path:
    path = Path(path)
    if path.suffix.lower() in PPM_SUFFIXES:
        write_ppm(path, image)
    else:
        Image.fromarray(to_uint8(image)).save(path)
    return path


def load_image(path: Union[str, Path]) -> NDArray[np.float64]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix.lower() in PPM_SUFFIXES:
        return read_ppm(path)
    try:
        with Image.open(path) as handle:
            mode = "L" if handle.mode in ("L", "1", "I", "I;16") else "RGB"
            pixels = np.asarray(handle.convert(mode))
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: unreadable image") from exc
    return from_uint8(pixels)
