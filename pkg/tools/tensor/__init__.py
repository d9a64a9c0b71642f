from tools.tensor.gradcheck import grad_check, kink_safe_offsets
from tools.tensor.ops import (
    DeformKernel,
    bilinear_sample,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d,
    deform_conv2d,
    global_avg_pool,
    sigmoid,
    silu,
    slice_channels,
    softmax_over,
    upsample_nearest,
)
from tools.tensor.tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    TensorError,
    backward,
    strict_mode,
)

__all__ = [
    "DeformKernel",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "TensorError",
    "backward",
    "bilinear_sample",
    "channel_max",
    "channel_mean",
    "concat_channels",
    "conv2d",
    "deform_conv2d",
    "global_avg_pool",
    "grad_check",
    "kink_safe_offsets",
    "sigmoid",
    "silu",
    "slice_channels",
    "softmax_over",
    "strict_mode",
    "upsample_nearest",
]
