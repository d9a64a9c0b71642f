"""
Multi-scale dual attention.

A block splits its input into four branches with growing receptive fields
(3, 5, 7, 9), gates each branch with spatial or channel attention, concatenates
the gated branches, gates the concatenation once more and adds a 1x1
projection of the result back onto the input:

    X1 = f3(X)      X2 = f3(X1)      X3 = f5(X1)      X4 = f5(X2)
    F  = A(cat) * cat,  cat = [A1(X1) * X1, ..., A4(X4) * X4]
    out = X + proj(F)

MPDA gates the fine branches X1, X2 spatially and the coarse branches X3, X4
by channel, with a spatial gate after concatenation. RMPDA swaps every kind.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np

from engines.nn import ConfigError, Conv, Module, Parameter
from tools.tensor import functions
from tools.tensor.ops import (
    DeformKernel,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d,
    global_avg_pool,
    sigmoid,
)
from tools.tensor.tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

RECEPTIVE_FIELDS = (3, 5, 7, 9)
SPATIAL_KERNEL = 7


class AttentionKind(str, Enum):
    SPATIAL = "spatial"
    CHANNEL = "channel"


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Nearest odd of log2(C) / gamma + b / gamma, at least 3."""
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    k = t if t % 2 else t + 1
    return max(k, 3)


@dataclass(frozen=True)
class DualAttentionConfig:
    in_channels: int
    branch_channels: tuple[int, int, int, int]
    fine_kind: AttentionKind  # X1, X2
    coarse_kind: AttentionKind  # X3, X4
    post_concat_kind: AttentionKind
    spatial_kernel: int = SPATIAL_KERNEL
    channel_kernel: Optional[int] = None  # None: ECA rule per gated width
    # smallest accepted H and W; below the largest field zero padding truncates it
    min_spatial: int = RECEPTIVE_FIELDS[-1]

    def __post_init__(self) -> None:
        if self.in_channels < 1 or min(self.branch_channels) < 1:
            raise ConfigError(f"channel widths must be positive: {self}")
        if self.fine_kind == self.coarse_kind:
            raise ConfigError("fine and coarse branch pairs must use different attention kinds")
        if self.spatial_kernel % 2 == 0 or (self.channel_kernel is not None and self.channel_kernel % 2 == 0):
            raise ConfigError("attention kernels must be odd")
        if self.min_spatial < 1:
            raise ConfigError(f"min_spatial must be positive, got {self.min_spatial}")

    @property
    def concat_channels(self) -> int:
        return sum(self.branch_channels)

    @property
    def branch_kinds(self) -> tuple[AttentionKind, ...]:
        return (self.fine_kind, self.fine_kind, self.coarse_kind, self.coarse_kind)

    def channel_kernel_for(self, channels: int) -> int:
        return self.channel_kernel if self.channel_kernel is not None else eca_kernel_size(channels)

    @classmethod
    def _quartered(
        cls, channels: int, fine: AttentionKind, coarse: AttentionKind, post: AttentionKind, min_spatial: int
    ) -> "DualAttentionConfig":
        if channels % 4:
            raise ConfigError(f"input channels {channels} must be divisible by 4")
        quarter = channels // 4
        return cls(channels, (quarter,) * 4, fine, coarse, post, min_spatial=min_spatial)

    @classmethod
    def mpda(cls, channels: int, min_spatial: int = RECEPTIVE_FIELDS[-1]) -> "DualAttentionConfig":
        return cls._quartered(channels, AttentionKind.SPATIAL, AttentionKind.CHANNEL, AttentionKind.SPATIAL, min_spatial)

    @classmethod
    def rmpda(cls, channels: int, min_spatial: int = RECEPTIVE_FIELDS[-1]) -> "DualAttentionConfig":
        return cls._quartered(channels, AttentionKind.CHANNEL, AttentionKind.SPATIAL, AttentionKind.CHANNEL, min_spatial)


@dataclass
class MultiScaleBundle:
    x1: Tensor
    x2: Tensor
    x3: Tensor
    x4: Tensor
    receptive_fields: tuple[int, int, int, int] = RECEPTIVE_FIELDS

    def as_list(self) -> list[Tensor]:
        return [self.x1, self.x2, self.x3, self.x4]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(x.shape[1] for x in self.as_list())


@dataclass
class AttentionMap:
    values: Tensor
    kind: AttentionKind


def spatial_attention(x: Tensor, weight: Tensor, bias: Tensor) -> AttentionMap:
    """sigmoid(k x k conv over [channel-mean; channel-max]) -> (N, 1, H, W)."""
    stacked = concat_channels([channel_mean(x), channel_max(x)])
    k = weight.shape[-1]
    logits = conv2d(stacked, DeformKernel(weight, bias), padding=k // 2)
    return AttentionMap(sigmoid(logits), AttentionKind.SPATIAL)


def channel_attention(x: Tensor, weight: Tensor, bias: Tensor) -> AttentionMap:
    """sigmoid(zero-padded 1-D conv across the pooled channel descriptor) -> (N, C, 1, 1)."""
    n, c = x.shape[:2]
    pooled = global_avg_pool(x)
    # channels become the height axis of a single-plane image
    descriptor = functions.reshape(pooled, (n, 1, c, 1))
    k = weight.shape[2]
    logits = conv2d(descriptor, DeformKernel(weight, bias), padding=(k // 2, 0))
    return AttentionMap(sigmoid(functions.reshape(logits, (n, c, 1, 1))), AttentionKind.CHANNEL)


def modulate(x: Tensor, attention: AttentionMap) -> Tensor:
    """Elementwise gating with broadcasting over the map's singleton axes."""
    values = attention.values
    try:
        broadcast = np.broadcast_shapes(x.shape, values.shape)
    except ValueError:
        broadcast = None
    if broadcast != x.shape:
        raise ShapeError(f"attention map {values.shape} cannot gate features {x.shape}")
    return functions.mul(x, values)


class SpatialAttention(Module):
    def __init__(self, kernel: int = SPATIAL_KERNEL, rng: Optional[np.random.Generator] = None, dtype: Any = np.float64) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = math.sqrt(3.0 / (2 * kernel * kernel))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(1, 2, kernel, kernel)), dtype=dtype)
        self.bias = Parameter(np.zeros(1), dtype=dtype)

    def forward(self, x: Tensor) -> AttentionMap:
        return spatial_attention(x, self.weight, self.bias)


class ChannelAttention(Module):
    def __init__(self, channels: int, kernel: Optional[int] = None, rng: Optional[np.random.Generator] = None, dtype: Any = np.float64) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel if kernel is not None else eca_kernel_size(channels)
        bound = math.sqrt(3.0 / k)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(1, 1, k, 1)), dtype=dtype)
        self.bias = Parameter(np.zeros(1), dtype=dtype)

    def forward(self, x: Tensor) -> AttentionMap:
        return channel_attention(x, self.weight, self.bias)


def _attention(kind: AttentionKind, channels: int, config: DualAttentionConfig, rng: np.random.Generator, dtype: Any) -> Module:
    if kind is AttentionKind.SPATIAL:
        return SpatialAttention(config.spatial_kernel, rng=rng, dtype=dtype)
    return ChannelAttention(channels, config.channel_kernel_for(channels), rng=rng, dtype=dtype)


class MultiScaleSplit(Module):
    """Four chained convolutions; inner 3x3 results are shared between branches."""

    def __init__(self, config: DualAttentionConfig, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        c1, c2, c3, c4 = config.branch_channels
        self.min_spatial = config.min_spatial
        self.conv1 = Conv(config.in_channels, c1, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv(c1, c2, 3, rng=rng, dtype=dtype)
        self.conv3 = Conv(c1, c3, 5, rng=rng, dtype=dtype)
        self.conv4 = Conv(c2, c4, 5, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> MultiScaleBundle:
        if x.ndim != 4 or min(x.shape[2:]) < self.min_spatial:
            raise ShapeError(
                f"multi-scale split needs spatial dims of at least {self.min_spatial}, got {x.shape}"
            )
        x1 = self.conv1(x)
        x2 = self.conv2(x1)
        x3 = self.conv3(x1)
        x4 = self.conv4(x2)
        return MultiScaleBundle(x1, x2, x3, x4)


def multiscale_split(x: Tensor, split: MultiScaleSplit) -> MultiScaleBundle:
    return split(x)


class DualAttention(Module):
    """Residual multi-scale dual-attention block; see the module docstring."""

    def __init__(self, config: DualAttentionConfig, rng: Optional[np.random.Generator] = None, dtype: Any = np.float64) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.split = MultiScaleSplit(config, rng, dtype)
        self.branch_attention = [
            _attention(kind, channels, config, rng, dtype)
            for kind, channels in zip(config.branch_kinds, config.branch_channels)
        ]
        self.post_attention = _attention(config.post_concat_kind, config.concat_channels, config, rng, dtype)
        self.projection = Conv(config.concat_channels, config.in_channels, 1, act=False, rng=rng, dtype=dtype)

    def branches(self, x: Tensor) -> MultiScaleBundle:
        return self.split(x)

    def fuse(self, bundle: MultiScaleBundle) -> Tensor:
        gated = [
            modulate(branch, attention(branch))
            for branch, attention in zip(bundle.as_list(), self.branch_attention)
        ]
        joined = concat_channels(gated)
        return modulate(joined, self.post_attention(joined))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"block expects {self.config.in_channels} channels, got {x.shape[1]}")
        return functions.add(x, self.projection(self.fuse(self.branches(x))))


class MPDA(DualAttention):
    """Spatial gates on the fine branches, channel gates on the coarse ones."""

    def __init__(
        self,
        channels: int,
        rng: Optional[np.random.Generator] = None,
        dtype: Any = np.float64,
        min_spatial: int = RECEPTIVE_FIELDS[-1],
    ) -> None:
        super().__init__(DualAttentionConfig.mpda(channels, min_spatial), rng=rng, dtype=dtype)


class RMPDA(DualAttention):
    """Channel gates on the fine branches, spatial gates on the coarse ones."""

    def __init__(
        self,
        channels: int,
        rng: Optional[np.random.Generator] = None,
        dtype: Any = np.float64,
        min_spatial: int = RECEPTIVE_FIELDS[-1],
    ) -> None:
        super().__init__(DualAttentionConfig.rmpda(channels, min_spatial), rng=rng, dtype=dtype)


def mpda(x: Tensor, block: DualAttention) -> Tensor:
    return block(x)


def rmpda(x: Tensor, block: DualAttention) -> Tensor:
    return block(x)
