"""
Spatial operations on (N, C, H, W) tensors:
- conv2d: dense convolution (im2col through strided windows)
- bilinear_sample: zero-padded bilinear read of one plane
- deform_conv2d: convolution at offset sampling positions
- global_avg_pool, channel_mean, channel_max
- concat_channels, slice_channels, upsample_nearest
- sigmoid / silu / softmax_over activations

Sampling positions for deform_conv2d: output (i, j), kernel tap k at grid
offset (a_k, b_k) and learned offset (dy, dx) reads input at
    y = i * stride - pad_h + a_k + dy
    x = j * stride - pad_w + b_k + dx
with bilinear interpolation and zero outside the image. At integer positions
the interpolation takes the cell whose upper corner is that integer, so the
derivative there is the one-sided derivative from the left.
"""

import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tools.tensor import functions
from tools.tensor.tensor import (
    Function,
    ShapeError,
    Tensor,
    TensorError,
    array_type,
)

Padding = Union[int, tuple[int, int]]


@dataclass
class DeformKernel:
    """
    Weights of a (possibly deformable) convolution.

    weight has shape (C_out, C_in, kh, kw); bias has shape (C_out,) or is None.
    """

    weight: Tensor
    bias: Optional[Tensor] = None

    def __post_init__(self) -> None:
        if self.weight.ndim != 4:
            raise ShapeError(f"kernel weight must be 4-D, got shape {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} output channels"
            )

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def taps(self) -> int:
        kh, kw = self.kernel_size
        return kh * kw

    @property
    def base_offsets(self) -> array_type:
        """(K, 2) integer grid offsets (a_k, b_k) centred on the kernel, row-major."""
        kh, kw = self.kernel_size
        ys, xs = np.meshgrid(np.arange(kh) - (kh - 1) // 2, np.arange(kw) - (kw - 1) // 2, indexing="ij")
        return np.stack([ys.reshape(-1), xs.reshape(-1)], axis=1).astype(np.float64)

    def tensors(self) -> tuple[Tensor, ...]:
        return (self.weight,) if self.bias is None else (self.weight, self.bias)


def _as_pair(padding: Padding) -> tuple[int, int]:
    if isinstance(padding, int):
        return padding, padding
    pad_h, pad_w = padding
    return int(pad_h), int(pad_w)


def _output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check_conv_args(x: Tensor, kernel: DeformKernel, stride: int, pad: tuple[int, int]) -> tuple[int, int]:
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) input, got shape {x.shape}")
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels but the kernel expects {kernel.in_channels}"
        )
    if stride < 1 or min(pad) < 0:
        raise TensorError(f"invalid stride {stride} or padding {pad}")
    kh, kw = kernel.kernel_size
    out_h = _output_size(x.shape[2], kh, stride, pad[0])
    out_w = _output_size(x.shape[3], kw, stride, pad[1])
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"{kh}x{kw} kernel with stride {stride} and padding {pad} "
            f"leaves no output for a {x.shape[2]}x{x.shape[3]} input"
        )
    return out_h, out_w


class Conv2d(Function):
    def forward(
        self,
        x: array_type,
        weight: array_type,
        bias: Optional[array_type] = None,
        *,
        stride: int,
        padding: tuple[int, int],
    ) -> array_type:
        pad_h, pad_w = padding
        self.stride = stride
        self.padding = padding
        self.x_shape = x.shape
        self.weight = weight
        self.has_bias = bias is not None

        padded = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w))) if pad_h or pad_w else x
        self.padded_shape = padded.shape
        kh, kw = weight.shape[2:]
        # (N, C, Ho, Wo, kh, kw)
        self.windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(self.windows, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        kh, kw = self.weight.shape[2:]
        s = self.stride
        pad_h, pad_w = self.padding
        _, _, out_h, out_w = grad.shape

        grad_weight = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        # (N, Ho, Wo, C, kh, kw)
        grad_cols = np.tensordot(grad, self.weight, axes=([1], [0]))
        grad_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for a in range(kh):
            for b in range(kw):
                grad_padded[:, :, a : a + s * (out_h - 1) + 1 : s, b : b + s * (out_w - 1) + 1 : s] += (
                    grad_cols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
                )
        h, w = self.x_shape[2:]
        grad_x = grad_padded[:, :, pad_h : pad_h + h, pad_w : pad_w + w]

        grads: list[Optional[array_type]] = [grad_x, grad_weight]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


def conv2d(x: Tensor, kernel: DeformKernel, stride: int = 1, padding: Padding = 0) -> Tensor:
    """Dense 2-D convolution (cross-correlation) with zero padding."""
    pad = _as_pair(padding)
    _check_conv_args(x, kernel, stride, pad)
    return Conv2d.apply(x, *kernel.tensors(), stride=stride, padding=pad)


def bilinear_sample(plane: Union[Tensor, array_type], y: float, x: float) -> float:
    """Bilinear read of a 2-D plane at a real position; outside pixels count as zero."""
    values = plane.data if isinstance(plane, Tensor) else np.asarray(plane)
    values = np.squeeze(values)
    if values.ndim != 2:
        raise ShapeError(f"bilinear_sample needs a single plane, got shape {values.shape}")
    height, width = values.shape

    y0, x0 = math.ceil(y) - 1, math.ceil(x) - 1
    ly, lx = y - y0, x - x0
    total = 0.0
    for row, wy in ((y0, 1.0 - ly), (y0 + 1, ly)):
        for col, wx in ((x0, 1.0 - lx), (x0 + 1, lx)):
            if 0 <= row < height and 0 <= col < width:
                total += wy * wx * float(values[row, col])
    return total


# corner offsets and the bilinear weight of each corner given fractional (ly, lx)
_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _corner_weights(ly: array_type, lx: array_type) -> list[array_type]:
    return [(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx]


class DeformConv2d(Function):
    def forward(
        self,
        x: array_type,
        weight: array_type,
        offsets: array_type,
        bias: Optional[array_type] = None,
        *,
        stride: int,
        padding: tuple[int, int],
        base: array_type,
    ) -> array_type:
        n, c, h, w = x.shape
        c_out = weight.shape[0]
        taps = base.shape[0]
        out_h, out_w = offsets.shape[2:]
        kh, kw = weight.shape[2:]
        pad_h, pad_w = padding

        self.x_shape = x.shape
        self.weight = weight
        self.has_bias = bias is not None

        delta = offsets.reshape(n, taps, 2, out_h, out_w)
        # grid positions relative to the top-left tap, shape (K,)
        tap_y = base[:, 0] + (kh - 1) // 2
        tap_x = base[:, 1] + (kw - 1) // 2
        anchor_y = np.arange(out_h) * stride - pad_h
        anchor_x = np.arange(out_w) * stride - pad_w
        pos_y = anchor_y[None, None, :, None] + tap_y[None, :, None, None] + delta[:, :, 0]
        pos_x = anchor_x[None, None, None, :] + tap_x[None, :, None, None] + delta[:, :, 1]

        # lower corner of the cell; an integer position lands on its upper corner
        floor_y = np.ceil(pos_y) - 1
        floor_x = np.ceil(pos_x) - 1
        ly = (pos_y - floor_y).astype(x.dtype)
        lx = (pos_x - floor_x).astype(x.dtype)
        floor_y = floor_y.astype(np.intp)
        floor_x = floor_x.astype(np.intp)
        self.ly, self.lx = ly, lx

        channels_last = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * h * w, c)
        batch = np.arange(n).reshape(n, 1, 1, 1)

        self.rows: list[array_type] = []
        self.valid: list[array_type] = []
        self.values: list[array_type] = []
        cols = np.zeros((n, taps, out_h, out_w, c), dtype=x.dtype)
        for (dy, dx), corner_weight in zip(_CORNERS, _corner_weights(ly, lx)):
            row = floor_y + dy
            col = floor_x + dx
            valid = (row >= 0) & (row < h) & (col >= 0) & (col < w)
            flat = (batch * h + np.clip(row, 0, h - 1)) * w + np.clip(col, 0, w - 1)
            value = channels_last[flat] * valid[..., None]
            cols += (corner_weight * valid)[..., None] * value
            self.rows.append(flat)
            self.valid.append(valid)
            self.values.append(value)
        self.cols = cols

        self.kernel = weight.reshape(c_out, c, taps)
        out = np.tensordot(cols, self.kernel, axes=([1, 4], [2, 1])).transpose(0, 3, 1, 2)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        n, c, h, w = self.x_shape
        taps = self.kernel.shape[2]

        grad_kernel = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3]))  # (Co, K, C)
        grad_weight = grad_kernel.transpose(0, 2, 1).reshape(self.weight.shape)

        # (N, K, Ho, Wo, C)
        grad_cols = np.tensordot(grad, self.kernel, axes=([1], [0])).transpose(0, 4, 1, 2, 3)

        grad_rows = np.zeros((n * h * w, c), dtype=grad.dtype)
        for flat, valid, corner_weight in zip(self.rows, self.valid, _corner_weights(self.ly, self.lx)):
            contribution = grad_cols * (corner_weight * valid)[..., None]
            np.add.at(grad_rows, flat.reshape(-1), contribution.reshape(-1, c))
        grad_x = grad_rows.reshape(n, h, w, c).transpose(0, 3, 1, 2)

        v00, v01, v10, v11 = self.values
        ly = self.ly[..., None]
        lx = self.lx[..., None]
        d_y = (1 - lx) * (v10 - v00) + lx * (v11 - v01)
        d_x = (1 - ly) * (v01 - v00) + ly * (v11 - v10)
        grad_dy = (grad_cols * d_y).sum(axis=-1)
        grad_dx = (grad_cols * d_x).sum(axis=-1)
        out_h, out_w = grad_dy.shape[2:]
        grad_offsets = np.stack([grad_dy, grad_dx], axis=2).reshape(n, 2 * taps, out_h, out_w)

        grads: list[Optional[array_type]] = [np.ascontiguousarray(grad_x), grad_weight, grad_offsets]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


def check_offsets(offsets: Tensor, kernel: DeformKernel, batch: int, out_hw: tuple[int, int]) -> None:
    if offsets.ndim != 4:
        raise ShapeError(f"offsets must be (N, 2K, H_out, W_out), got shape {offsets.shape}")
    if offsets.shape[1] != 2 * kernel.taps:
        raise ShapeError(
            f"offsets have {offsets.shape[1]} channels, expected 2K = {2 * kernel.taps}"
        )
    if offsets.shape[0] != batch or offsets.shape[2:] != out_hw:
        raise ShapeError(
            f"offsets shape {offsets.shape} does not match batch {batch} and output {out_hw}"
        )


def deform_conv2d(
    x: Tensor,
    kernel: DeformKernel,
    offsets: Tensor,
    stride: int = 1,
    padding: Optional[Padding] = None,
) -> Tensor:
    """
    Deformable convolution. Padding defaults to half the kernel size.

    Offsets are laid out (N, 2K, H_out, W_out) with channel 2k holding dy and
    channel 2k + 1 holding dx for kernel tap k in row-major order. Zero offsets
    reproduce conv2d exactly.
    """
    kh, kw = kernel.kernel_size
    pad = _as_pair(padding if padding is not None else (kh // 2, kw // 2))
    out_hw = _check_conv_args(x, kernel, stride, pad)
    check_offsets(offsets, kernel, x.shape[0], out_hw)
    tensors: list[Tensor] = [x, kernel.weight, offsets]
    if kernel.bias is not None:
        tensors.append(kernel.bias)
    return DeformConv2d.apply(*tensors, stride=stride, padding=pad, base=kernel.base_offsets)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 1, 1)"""
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) input, got shape {x.shape}")
    return functions.mean(x, axis=(2, 3), keepdims=True)


def channel_mean(x: Tensor) -> Tensor:
    return functions.mean(x, axis=1, keepdims=True)


def channel_max(x: Tensor) -> Tensor:
    return functions.max_over(x, axis=1, keepdims=True)


def sigmoid(x: Tensor) -> Tensor:
    return functions.sigmoid(x)


def silu(x: Tensor) -> Tensor:
    return functions.silu(x)


def softmax_over(x: Tensor, axis: int) -> Tensor:
    return functions.softmax(x, axis=axis)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along channels; batch and spatial dims must agree."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    reference = parts[0].shape
    for part in parts:
        if part.ndim != 4 or part.shape[0] != reference[0] or part.shape[2:] != reference[2:]:
            raise ShapeError(
                f"cannot concatenate {part.shape} with {reference}: spatial mismatch"
            )
    return functions.concat(parts, axis=1)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel slice [{start}:{stop}] outside {x.shape[1]} channels")
    return functions.index(x, (slice(None), slice(start, stop)))


class UpsampleNearest(Function):
    def forward(self, x: array_type, *, factor: int) -> array_type:
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        n, c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) input, got shape {x.shape}")
    return UpsampleNearest.apply(x, factor=factor)


def to_tensor(images: Any, dtype: Any = np.float64) -> Tensor:
    """Stack (C, H, W) arrays or pass through an (N, C, H, W) array."""
    array = np.asarray(images, dtype=dtype)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4:
        raise ShapeError(f"expected images of rank 3 or 4, got shape {array.shape}")
    return Tensor(array)
