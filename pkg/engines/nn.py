"""
Minimal module system for the detector:
- Parameter / Module with ordered, dotted parameter names
- Conv: convolution + optional SiLU (the YOLO "Conv" unit, no normalization)
- OffsetBranch: zero-initialized 3x3 convolution predicting 2K offsets
- DeformConv: deformable convolution driven by its own OffsetBranch
- parameter_census / count_parameters
"""

import logging
from collections import OrderedDict
from typing import Any, Iterator, Optional

import numpy as np

from tools.tensor.ops import DeformKernel, conv2d, deform_conv2d, silu
from tools.tensor.tensor import Tensor

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised on an inconsistent model configuration."""


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data: Any, dtype: Any = np.float64) -> None:
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True)


class Module:
    """
    Base class for layers. Parameters, sub-modules and lists of sub-modules
    assigned as attributes are discovered in assignment order.
    """

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for position, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{position}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def zero_grad(self) -> None:
        for parameter in self.parameters():
            parameter.zero_grad()

    def astype(self, dtype: Any) -> "Module":
        for parameter in self.parameters():
            parameter.data = np.ascontiguousarray(parameter.data.astype(dtype))
            parameter.grad = None
        return self

    @property
    def dtype(self) -> np.dtype[Any]:
        parameters = self.parameters()
        return parameters[0].dtype if parameters else np.dtype(np.float64)


def parameter_census(module: Module) -> "OrderedDict[str, tuple[int, ...]]":
    """Ordered mapping of parameter name to shape."""
    return OrderedDict((name, p.shape) for name, p in module.named_parameters())


def count_parameters(module: Module) -> int:
    return sum(p.size for p in module.parameters())


def _init_weight(
    rng: np.random.Generator, c_out: int, c_in: int, kh: int, kw: int, dtype: Any
) -> Parameter:
    fan_in = c_in * kh * kw
    bound = np.sqrt(3.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=(c_out, c_in, kh, kw)), dtype=dtype)


class Conv(Module):
    """k x k convolution with bias, "same" padding, optional SiLU."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int = 1,
        stride: int = 1,
        act: bool = True,
        rng: Optional[np.random.Generator] = None,
        dtype: Any = np.float64,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _init_weight(rng, c_out, c_in, k, k, dtype)
        self.bias = Parameter(np.zeros(c_out), dtype=dtype)
        self.stride = stride
        self.padding = k // 2
        self.act = act

    @property
    def kernel(self) -> DeformKernel:
        return DeformKernel(self.weight, self.bias)

    def forward(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.kernel, stride=self.stride, padding=self.padding)
        return silu(y) if self.act else y


class OffsetBranch(Module):
    """3x3 convolution C -> 2K, all weights and biases zero at construction."""

    def __init__(self, c_in: int, taps: int, stride: int = 1, dtype: Any = np.float64) -> None:
        self.weight = Parameter(np.zeros((2 * taps, c_in, 3, 3)), dtype=dtype)
        self.bias = Parameter(np.zeros(2 * taps), dtype=dtype)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, DeformKernel(self.weight, self.bias), stride=self.stride, padding=1)


def offset_branch(x: Tensor, branch: OffsetBranch) -> Tensor:
    """Offsets (N, 2K, H_out, W_out) predicted from x."""
    return branch(x)


class DeformConv(Module):
    """
    Deformable k x k convolution with bias and optional SiLU.

    Draws exactly the same random numbers as Conv with the same arguments, so a
    deformable and a standard layer built from equal seeds start identical.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int = 3,
        stride: int = 1,
        act: bool = True,
        rng: Optional[np.random.Generator] = None,
        dtype: Any = np.float64,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _init_weight(rng, c_out, c_in, k, k, dtype)
        self.bias = Parameter(np.zeros(c_out), dtype=dtype)
        self.offsets = OffsetBranch(c_in, k * k, stride=stride, dtype=dtype)
        self.stride = stride
        self.padding = k // 2
        self.act = act

    @property
    def kernel(self) -> DeformKernel:
        return DeformKernel(self.weight, self.bias)

    def forward(self, x: Tensor) -> Tensor:
        offsets = offset_branch(x, self.offsets)
        y = deform_conv2d(x, self.kernel, offsets, stride=self.stride, padding=self.padding)
        return silu(y) if self.act else y


def make_conv3x3(
    c_in: int,
    c_out: int,
    deformable: bool,
    rng: np.random.Generator,
    dtype: Any = np.float64,
    act: bool = True,
) -> Module:
    if deformable:
        return DeformConv(c_in, c_out, 3, act=act, rng=rng, dtype=dtype)
    return Conv(c_in, c_out, 3, act=act, rng=rng, dtype=dtype)
