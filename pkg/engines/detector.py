"""
Anchor-free single-stage detector.

Each pyramid level predicts, per cell, [tx, ty, tw, th, obj, class logits...]:
    cx = (j + sigmoid(tx)) * s / image_size
    cy = (i + sigmoid(ty)) * s / image_size
    w  = exp(min(tw, 4)) * 4s / image_size
    h  = exp(min(th, 4)) * 4s / image_size
so tw = 0 means the level's nominal object size 4s.
"""

import logging
import math
from typing import Any

import numpy as np

from engines.backbone import STRIDES, Backbone, ModelConfig, PanNeck, check_pyramid
from engines.nn import Conv, Module
from tools.tensor.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

BOX_CHANNELS = 5
TW_CLAMP = 4.0
# initial objectness / class probability
PRIOR_PROBABILITY = 0.01


class Head(Module):
    """3x3 Conv + SiLU, then a 1x1 projection to 5 + num_classes channels."""

    def __init__(self, channels: int, num_classes: int, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        self.stem = Conv(channels, channels, 3, rng=rng, dtype=dtype)
        self.predict = Conv(channels, BOX_CHANNELS + num_classes, 1, act=False, rng=rng, dtype=dtype)
        prior = math.log(PRIOR_PROBABILITY / (1 - PRIOR_PROBABILITY))
        self.predict.bias.data[4:] = prior

    def forward(self, x: Tensor) -> Tensor:
        return self.predict(self.stem(x))


class Detector(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        self.config = config
        self.backbone = Backbone(config, rng, dtype)
        self.neck = PanNeck(config, rng, dtype)
        self.heads = [Head(c, config.num_classes, rng, dtype) for c in config.widths]

    @property
    def strides(self) -> tuple[int, ...]:
        return STRIDES

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def forward(self, images: Tensor) -> list[Tensor]:
        expected = (self.config.in_channels, self.config.image_size, self.config.image_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ShapeError(f"model expects images of shape (N, {expected}), got {images.shape}")
        features = self.backbone(images)
        check_pyramid(images, features)
        fused = self.neck(features)
        return [head(level) for head, level in zip(self.heads, fused.as_list())]


def build_model(config: ModelConfig, seed: int = 0, dtype: Any = np.float64) -> Detector:
    model = Detector(config, np.random.default_rng(seed), dtype)
    logger.info(
        "built detector: image %d, flags %s, %d parameters",
        config.image_size,
        config.flags,
        sum(p.size for p in model.parameters()),
    )
    return model


def forward(model: Detector, images: Tensor) -> list[Tensor]:
    """Raw per-level predictions (N, 5 + num_classes, H_l, W_l)."""
    return model(images)
