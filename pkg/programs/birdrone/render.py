import argparse
import logging
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray
from PIL import Image, ImageDraw
from rich.console import Console

from engines.postprocess import predict
from programs.birdrone.config import RunConfig
from programs.birdrone.evaluate import load_model
from programs.birdrone.train import add_model_arguments
from tools.dataset.data import CLASS_NAMES, Detection, Sample, sample_id_type
from tools.dataset.images import from_uint8, load_image, save_image, to_uint8

logger = logging.getLogger(__name__)
console = Console()

# class 0 drone, class 1 bird
PALETTE = ((255, 0, 0), (0, 0, 255))
TAG_HEIGHT = 11


def box_pixels(detection: Detection, width: int, height: int) -> tuple[int, int, int, int]:
    """Inclusive pixel corners of a detection's box."""
    x1, y1, x2, y2 = detection.box.corners()
    left = int(np.clip(round(x1 * width), 0, width - 1))
    top = int(np.clip(round(y1 * height), 0, height - 1))
    right = int(np.clip(round(x2 * width) - 1, left, width - 1))
    bottom = int(np.clip(round(y2 * height) - 1, top, height - 1))
    return left, top, right, bottom


def draw_detections(
    image: NDArray[Any], detections: Sequence[Detection], tags: bool = True
) -> NDArray[np.float64]:
    """RGB copy of a (C, H, W) image with a 1-px outline (and confidence tag) per detection."""
    pixels = to_uint8(image)
    canvas = Image.fromarray(pixels).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for detection in detections:
        color = PALETTE[detection.class_id % len(PALETTE)]
        left, top, right, bottom = box_pixels(detection, canvas.width, canvas.height)
        draw.rectangle((left, top, right, bottom), outline=color, width=1)
        if tags:
            name = CLASS_NAMES[detection.class_id] if detection.class_id < len(CLASS_NAMES) else str(detection.class_id)
            tag_top = top - TAG_HEIGHT if top >= TAG_HEIGHT else bottom + 1
            draw.text((left, tag_top), f"{name} {detection.confidence:.2f}", fill=color)
    return from_uint8(np.asarray(canvas))


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("infer", aliases=["render"], help="Draw detections onto an image")
    parser.add_argument("--weights", type=Path, required=True, help="BDRN1 weight file")
    parser.add_argument("--image", type=Path, required=True, help="Input PPM/PNG image")
    parser.add_argument("--conf", type=float, default=0.25, help="Confidence threshold")
    parser.add_argument("--iou", type=float, default=0.5, help="NMS IoU threshold")
    parser.add_argument("--no-tags", action="store_true", help="Outlines only, no confidence text")
    add_model_arguments(parser)
    parser.add_argument("--out", type=Path, required=True, help="Output image (.ppm or .png)")
    parser.set_defaults(handler=cmd_infer)
    return parser


def cmd_infer(config: RunConfig) -> int:
    image = load_image(config.get("image"))
    model = load_model(config, Path(config.get("weights")), image.shape[0])
    sample = Sample(sample_id_type(Path(config.get("image")).stem), image)
    detections = predict(model, [sample], config.get("conf"), config.get("iou"))[sample.id]

    out = Path(config.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, draw_detections(image, detections, tags=not config.get("no_tags")))
    for detection in detections:
        logger.info("%s", detection.to_dict())
    console.print(f"[bold]{len(detections)}[/bold] detections drawn to {out}")
    return 0
