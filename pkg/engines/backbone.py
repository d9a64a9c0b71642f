"""
GELAN / AELAN blocks and the feature pyramid.

An ELAN block runs a 1x1 transition to its hidden width, splits the result into
two halves and feeds the second half through a chain of CSP units. Both halves
and every unit output are concatenated and fused by a closing 1x1 transition.
AELAN is the same topology with every 3x3 convolution inside the CSP units
replaced by a deformable one, each with its own zero-initialized offset branch.

Pyramid: stem (two stride-2 convs) -> P3 / P4 / P5 stages (stride-2 conv +
block) at strides 8 / 16 / 32, followed by a top-down + bottom-up PAN neck.
Attention blocks inside the pyramid accept maps smaller than 9x9 (P5 is 5x5
at 160 px); zero padding then truncates the widest receptive fields.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from engines.attention import MPDA, RMPDA
from engines.nn import ConfigError, Conv, Module, make_conv3x3
from tools.tensor import functions
from tools.tensor.ops import concat_channels, slice_channels, upsample_nearest
from tools.tensor.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

STRIDES = (8, 16, 32)


@dataclass(frozen=True)
class AblationFlags:
    aelan: bool = False
    mpda: bool = False
    rmpda: bool = False


ABLATION_MODELS: dict[str, AblationFlags] = {
    "m1": AblationFlags(),
    "m2": AblationFlags(aelan=True),
    "m3": AblationFlags(mpda=True),
    "m4": AblationFlags(rmpda=True),
    "m5": AblationFlags(mpda=True, rmpda=True),
    "m6": AblationFlags(aelan=True, mpda=True, rmpda=True),
}


def ablation_flags(name: str) -> AblationFlags:
    try:
        return ABLATION_MODELS[name.lower()]
    except KeyError:
        valid = ", ".join(ABLATION_MODELS)
        raise ConfigError(f"unknown model {name!r}; valid options: {valid}") from None


@dataclass(frozen=True)
class AelanConfig:
    in_channels: int
    out_channels: int
    hidden_channels: int  # transition width, split into two halves
    csp_depth: int = 2
    use_deformable: bool = True

    def __post_init__(self) -> None:
        if min(self.in_channels, self.out_channels, self.hidden_channels) < 1:
            raise ConfigError(f"channel widths must be positive: {self}")
        if self.hidden_channels % 2:
            raise ConfigError(f"hidden width {self.hidden_channels} must split into equal halves")
        if self.csp_depth < 1:
            raise ConfigError(f"csp_depth must be at least 1, got {self.csp_depth}")

    @property
    def half(self) -> int:
        return self.hidden_channels // 2

    @property
    def concat_channels(self) -> int:
        return self.half * (2 + self.csp_depth)


class CSPUnit(Module):
    """
    1x1 reduce -> residual 3x3/3x3 bottleneck, concatenated with a 1x1 bypass,
    merged by 1x1, then a closing 3x3. Width in == width out.
    """

    def __init__(self, channels: int, deformable: bool, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        inner = max(channels // 2, 1)
        self.reduce = Conv(channels, inner, 1, rng=rng, dtype=dtype)
        self.bottleneck = [
            make_conv3x3(inner, inner, deformable, rng, dtype),
            make_conv3x3(inner, inner, deformable, rng, dtype),
        ]
        self.bypass = Conv(channels, inner, 1, rng=rng, dtype=dtype)
        self.merge = Conv(2 * inner, channels, 1, rng=rng, dtype=dtype)
        self.closing = make_conv3x3(channels, channels, deformable, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        reduced = self.reduce(x)
        residual = functions.add(reduced, self.bottleneck[1](self.bottleneck[0](reduced)))
        merged = self.merge(concat_channels([residual, self.bypass(x)]))
        return self.closing(merged)


class AelanBlock(Module):
    def __init__(self, config: AelanConfig, rng: Optional[np.random.Generator] = None, dtype: Any = np.float64) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.enter = Conv(config.in_channels, config.hidden_channels, 1, rng=rng, dtype=dtype)
        self.units = [CSPUnit(config.half, config.use_deformable, rng, dtype) for _ in range(config.csp_depth)]
        self.exit = Conv(config.concat_channels, config.out_channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"block expects {self.config.in_channels} input channels, got shape {x.shape}")
        hidden = self.enter(x)
        half = self.config.half
        outputs = [slice_channels(hidden, 0, half), slice_channels(hidden, half, 2 * half)]
        for unit in self.units:
            outputs.append(unit(outputs[-1]))
        return self.exit(concat_channels(outputs))


def aelan_block(x: Tensor, block: AelanBlock) -> Tensor:
    return block(x)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 160
    in_channels: int = 1
    num_classes: int = 2
    stem_channels: int = 16
    widths: tuple[int, int, int] = (32, 64, 128)
    csp_depth: int = 2
    flags: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self) -> None:
        if self.image_size <= 0 or self.image_size % 32:
            raise ConfigError(f"image size {self.image_size} must be a positive multiple of 32")
        if min(self.in_channels, self.num_classes, self.stem_channels, *self.widths) < 1:
            raise ConfigError(f"channel counts must be positive: {self}")
        if list(self.widths) != sorted(self.widths):
            raise ConfigError(f"pyramid widths must be non-decreasing: {self.widths}")

    @property
    def grid_sizes(self) -> tuple[int, ...]:
        return tuple(self.image_size // s for s in STRIDES)


@dataclass
class PyramidFeatures:
    p3: Tensor
    p4: Tensor
    p5: Tensor
    strides: tuple[int, int, int] = STRIDES

    def as_list(self) -> list[Tensor]:
        return [self.p3, self.p4, self.p5]


def _block(c_in: int, c_out: int, config: ModelConfig, rng: np.random.Generator, dtype: Any) -> AelanBlock:
    block_config = AelanConfig(c_in, c_out, c_out, config.csp_depth, use_deformable=config.flags.aelan)
    return AelanBlock(block_config, rng, dtype)


class Backbone(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        c3, c4, c5 = config.widths
        stem = config.stem_channels
        self.config = config
        self.stem = [
            Conv(config.in_channels, stem, 3, stride=2, rng=rng, dtype=dtype),
            Conv(stem, stem, 3, stride=2, rng=rng, dtype=dtype),
        ]
        self.down3 = Conv(stem, c3, 3, stride=2, rng=rng, dtype=dtype)
        self.stage3 = _block(c3, c3, config, rng, dtype)
        self.attention3 = MPDA(c3, rng=rng, dtype=dtype, min_spatial=1) if config.flags.mpda else None
        self.down4 = Conv(c3, c4, 3, stride=2, rng=rng, dtype=dtype)
        self.stage4 = _block(c4, c4, config, rng, dtype)
        self.down5 = Conv(c4, c5, 3, stride=2, rng=rng, dtype=dtype)
        self.stage5 = _block(c5, c5, config, rng, dtype)
        self.attention5 = RMPDA(c5, rng=rng, dtype=dtype, min_spatial=1) if config.flags.rmpda else None

    def forward(self, images: Tensor) -> PyramidFeatures:
        x = images
        for layer in self.stem:
            x = layer(x)
        p3 = self.stage3(self.down3(x))
        if self.attention3 is not None:
            p3 = self.attention3(p3)
        p4 = self.stage4(self.down4(p3))
        p5 = self.stage5(self.down5(p4))
        if self.attention5 is not None:
            p5 = self.attention5(p5)
        return PyramidFeatures(p3, p4, p5)


class PanNeck(Module):
    """Top-down then bottom-up fusion; concat + block at every merge."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        c3, c4, c5 = config.widths
        self.top_down4 = _block(c5 + c4, c4, config, rng, dtype)
        self.top_down3 = _block(c4 + c3, c3, config, rng, dtype)
        self.down3 = Conv(c3, c3, 3, stride=2, rng=rng, dtype=dtype)
        self.bottom_up4 = _block(c3 + c4, c4, config, rng, dtype)
        self.down4 = Conv(c4, c4, 3, stride=2, rng=rng, dtype=dtype)
        self.bottom_up5 = _block(c4 + c5, c5, config, rng, dtype)
        self.attention5 = RMPDA(c5, rng=rng, dtype=dtype, min_spatial=1) if config.flags.rmpda else None

    def forward(self, features: PyramidFeatures) -> PyramidFeatures:
        n4 = self.top_down4(concat_channels([upsample_nearest(features.p5), features.p4]))
        n3 = self.top_down3(concat_channels([upsample_nearest(n4), features.p3]))
        o4 = self.bottom_up4(concat_channels([self.down3(n3), n4]))
        o5 = self.bottom_up5(concat_channels([self.down4(o4), features.p5]))
        if self.attention5 is not None:
            o5 = self.attention5(o5)
        return PyramidFeatures(n3, o4, o5)


def build_backbone(config: ModelConfig, seed: int = 0, dtype: Any = np.float64) -> Backbone:
    """Backbone producing P3 / P4 / P5 for the given ablation flags."""
    rng = np.random.default_rng(seed)
    backbone = Backbone(config, rng, dtype)
    logger.debug("built backbone with flags %s", config.flags)
    return backbone


def check_pyramid(images: Tensor, features: PyramidFeatures) -> None:
    height, width = images.shape[2:]
    previous = 0
    for level, stride in zip(features.as_list(), features.strides):
        if level.shape[2:] != (height // stride, width // stride):
            raise ShapeError(f"level at stride {stride} has shape {level.shape}")
        if level.shape[1] < previous:
            raise ShapeError("pyramid channel widths must not shrink with depth")
        previous = level.shape[1]
