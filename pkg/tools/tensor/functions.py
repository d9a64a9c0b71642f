"""
Elementwise, reduction and structural differentiable functions.

Binary functions broadcast like numpy and sum gradients back to each input
shape. Python scalars are promoted to constants in the other operand's dtype.
"""

from typing import Any, Optional, Sequence, Union

import numpy as np

from tools.tensor.tensor import (
    Function,
    ShapeError,
    Tensor,
    array_type,
    as_tensor,
)

Operand = Union[Tensor, float, int]
Axis = Optional[Union[int, tuple[int, ...]]]


def _pair(a: Operand, b: Operand) -> tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


class Add(Function):
    def forward(self, x: array_type, y: array_type) -> array_type:
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x: array_type, y: array_type) -> array_type:
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x: array_type, y: array_type) -> array_type:
        self.x, self.y = x, y
        return x * y

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (
            self.unbroadcast(grad * self.y, self.x.shape),
            self.unbroadcast(grad * self.x, self.y.shape),
        )


class Div(Function):
    def forward(self, x: array_type, y: array_type) -> array_type:
        self.x, self.y = x, y
        return x / y

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (
            self.unbroadcast(grad / self.y, self.x.shape),
            self.unbroadcast(-grad * self.x / (self.y * self.y), self.y.shape),
        )


class Neg(Function):
    def forward(self, x: array_type) -> array_type:
        return -x

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (-grad,)


class Exp(Function):
    def forward(self, x: array_type) -> array_type:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, x: array_type) -> array_type:
        self.x = x
        return np.log(x)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (grad / self.x,)


class Sqrt(Function):
    def forward(self, x: array_type) -> array_type:
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (grad * 0.5 / self.out,)


class Atan(Function):
    def forward(self, x: array_type) -> array_type:
        self.x = x
        return np.arctan(x)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (grad / (1.0 + self.x * self.x),)


def _sigmoid(x: array_type) -> array_type:
    # exp of a non-positive argument never overflows
    z = np.exp(-np.abs(x))
    return np.asarray(np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)), dtype=x.dtype)


class Sigmoid(Function):
    def forward(self, x: array_type) -> array_type:
        self.out = _sigmoid(x)
        return self.out

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (grad * self.out * (1.0 - self.out),)


class SiLU(Function):
    def forward(self, x: array_type) -> array_type:
        self.x = x
        self.gate = _sigmoid(x)
        return x * self.gate

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        s = self.gate
        return (grad * (s + self.x * s * (1.0 - s)),)


class Softmax(Function):
    def forward(self, x: array_type, *, axis: int) -> array_type:
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        dot = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - dot),)


class Maximum(Function):
    """Elementwise max; ties send the gradient to the first operand."""

    def forward(self, x: array_type, y: array_type) -> array_type:
        self.shapes = (x.shape, y.shape)
        self.first = x >= y
        return np.maximum(x, y)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (
            self.unbroadcast(np.where(self.first, grad, 0.0), self.shapes[0]),
            self.unbroadcast(np.where(self.first, 0.0, grad), self.shapes[1]),
        )


class Minimum(Function):
    """Elementwise min; ties send the gradient to the first operand."""

    def forward(self, x: array_type, y: array_type) -> array_type:
        self.shapes = (x.shape, y.shape)
        self.first = x <= y
        return np.minimum(x, y)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (
            self.unbroadcast(np.where(self.first, grad, 0.0), self.shapes[0]),
            self.unbroadcast(np.where(self.first, 0.0, grad), self.shapes[1]),
        )


class Sum(Function):
    def forward(self, x: array_type, *, axis: Axis, keepdims: bool) -> array_type:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    def forward(self, x: array_type, *, axis: Axis, keepdims: bool) -> array_type:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims))
        self.count = x.size // max(out.size, 1) if x.size else 1
        return out

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape).copy(),)


class Max(Function):
    """Max over one axis; the subgradient goes to the first maximal element."""

    def forward(self, x: array_type, *, axis: int, keepdims: bool) -> array_type:
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        self.argmax = np.expand_dims(np.argmax(x, axis=axis), axis)
        return np.take_along_axis(x, self.argmax, axis=axis) if keepdims else x.max(axis=axis)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.put_along_axis(out, self.argmax, grad, axis=self.axis)
        return (out,)


class Reshape(Function):
    def forward(self, x: array_type, *, shape: tuple[int, ...]) -> array_type:
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return (grad.reshape(self.shape),)


class Index(Function):
    def forward(self, x: array_type, *, index: Any) -> array_type:
        self.shape = x.shape
        self.index = index
        return np.array(x[index])

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays: array_type, axis: int) -> array_type:
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return tuple(np.split(grad, self.bounds, axis=self.axis))


class BinaryCrossEntropyWithLogits(Function):
    """Elementwise BCE on logits: max(z, 0) - z * t + log(1 + exp(-|z|))."""

    def forward(self, logits: array_type, targets: array_type) -> array_type:
        self.logits, self.targets = logits, targets
        return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        return grad * (_sigmoid(self.logits) - self.targets), None


def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(*_pair(a, b))


def sub(a: Operand, b: Operand) -> Tensor:
    return Sub.apply(*_pair(a, b))


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(*_pair(a, b))


def div(a: Operand, b: Operand) -> Tensor:
    return Div.apply(*_pair(a, b))


def neg(x: Tensor) -> Tensor:
    return Neg.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def sqrt(x: Tensor) -> Tensor:
    return Sqrt.apply(x)


def atan(x: Tensor) -> Tensor:
    return Atan.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    """
    Logistic function. Strictly inside (0, 1) for |x| <= 36 in float64; past
    that it rounds to exactly 1.0 (or, below about -745, to 0.0).
    """
    return Sigmoid.apply(x)


def silu(x: Tensor) -> Tensor:
    return SiLU.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def maximum(a: Operand, b: Operand) -> Tensor:
    return Maximum.apply(*_pair(a, b))


def minimum(a: Operand, b: Operand) -> Tensor:
    return Minimum.apply(*_pair(a, b))


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def max_over(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return Max.apply(x, axis=axis, keepdims=keepdims)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return Reshape.apply(x, shape=tuple(int(s) for s in shape))


def index(x: Tensor, key: Any) -> Tensor:
    return Index.apply(x, index=key)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def binary_cross_entropy_with_logits(logits: Tensor, targets: Union[Tensor, array_type]) -> Tensor:
    """Elementwise, unreduced. Targets never receive a gradient."""
    values = targets.data if isinstance(targets, Tensor) else targets
    target = Tensor(np.asarray(values, dtype=logits.dtype))
    if target.shape != logits.shape:
        raise ShapeError(f"targets {target.shape} do not match logits {logits.shape}")
    return BinaryCrossEntropyWithLogits.apply(logits, target)
