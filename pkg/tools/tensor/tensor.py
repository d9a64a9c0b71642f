"""
Dense tensors with reverse-mode differentiation:
- Tensor: N-dimensional float array with an optional gradient
- Function: base class for differentiable operations
- Tape: ordered record of operations executed while it is active
- strict_mode: reject non-finite operation inputs

Operations only record while a Tape is active. Inference code simply runs
without a tape and nothing is retained for a backward pass.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Any, Iterator, NewType, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

array_type = NDArray[np.floating[Any]]
shape_type = NewType("shape_type", tuple[int, ...])

Scalar = Union[float, int]


class TensorError(ValueError):
    """Raised on invalid tensor arguments."""


class ShapeError(TensorError):
    """Raised when tensor shapes are incompatible with an operation."""


class NonFiniteError(TensorError):
    """Raised in strict mode when an operation receives NaN or Inf."""


class GraphError(RuntimeError):
    """Raised when a backward pass cannot be driven from the given tensor."""


_local = threading.local()


def is_strict() -> bool:
    return bool(getattr(_local, "strict", False))


def set_strict(enabled: bool) -> None:
    _local.strict = enabled


@contextmanager
def strict_mode(enabled: bool = True) -> Iterator[None]:
    """Temporarily turn non-finite input checking on (or off)."""
    previous = is_strict()
    set_strict(enabled)
    try:
        yield
    finally:
        set_strict(previous)


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    A float array plus gradient bookkeeping.

    Integer and boolean data are promoted to float64. Floating data keeps its
    precision, so a float32 model stays float32 end to end.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype[Any] | type] = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data: array_type = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[array_type] = None
        # (tape, position) of the operation that produced this tensor
        self.node: Optional[tuple["Tape", int]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> array_type:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: array_type) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match tensor shape {self.shape}"
            )
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad})"
        )

    # operator sugar, resolved lazily because functions.py imports this module

    def __add__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from tools.tensor import functions

        return functions.add(self, other)

    def __radd__(self, other: Scalar) -> "Tensor":
        from tools.tensor import functions

        return functions.add(other, self)

    def __sub__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from tools.tensor import functions

        return functions.sub(self, other)

    def __rsub__(self, other: Scalar) -> "Tensor":
        from tools.tensor import functions

        return functions.sub(other, self)

    def __mul__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from tools.tensor import functions

        return functions.mul(self, other)

    def __rmul__(self, other: Scalar) -> "Tensor":
        from tools.tensor import functions

        return functions.mul(other, self)

    def __truediv__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        from tools.tensor import functions

        return functions.div(self, other)

    def __rtruediv__(self, other: Scalar) -> "Tensor":
        from tools.tensor import functions

        return functions.div(other, self)

    def __neg__(self) -> "Tensor":
        from tools.tensor import functions

        return functions.neg(self)

    def __getitem__(self, index: Any) -> "Tensor":
        from tools.tensor import functions

        return functions.index(self, index)

    def sum(self, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        from tools.tensor import functions

        return functions.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        from tools.tensor import functions

        return functions.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        from tools.tensor import functions

        return functions.reshape(self, shape)


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the
    gradient of the output to one gradient (or None) per input. Anything the
    backward rule needs is stored on the instance during `forward`.
    """

    def __init__(self) -> None:
        self.inputs: tuple[Tensor, ...] = ()

    def forward(self, *arrays: array_type, **kwargs: Any) -> array_type:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: array_type) -> Sequence[Optional[array_type]]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        if is_strict():
            for position, tensor in enumerate(tensors):
                if not np.all(np.isfinite(tensor.data)):
                    raise NonFiniteError(
                        f"{cls.__name__} received non-finite values in input {position}"
                    )

        function = cls()
        out = Tensor(function.forward(*(t.data for t in tensors), **kwargs))

        tape = current_tape()
        if tape is not None and any(t.requires_grad for t in tensors):
            function.inputs = tensors
            out.requires_grad = True
            tape.record(function, out)
        return out

    @staticmethod
    def unbroadcast(grad: array_type, shape: tuple[int, ...]) -> array_type:
        """Sum a broadcast gradient back down to `shape`."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tape:
    """
    Records operations in execution order.

    Execution order is a topological order of the graph, so replaying the record
    backwards visits every node exactly once, after all of its consumers.

    Example:
        with Tape() as tape:
            loss = model(x).sum()
        tape.backward(loss)
    """

    def __init__(self) -> None:
        self.entries: list[tuple[Function, Tensor]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        elif self in stack:
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, function: Function, out: Tensor) -> None:
        out.node = (self, len(self.entries))
        self.entries.append((function, out))

    def clear(self) -> None:
        self.entries.clear()

    def backward(self, loss: Tensor) -> None:
        """Populate `.grad` on every requires-grad tensor reachable from `loss`."""
        if loss.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None or loss.node[0] is not self:
            raise GraphError(
                "loss was not produced by an operation on this tape (detached graph)"
            )

        last = loss.node[1]
        pending: dict[int, array_type] = {id(loss): np.ones_like(loss.data)}

        for function, out in reversed(self.entries[: last + 1]):
            grad = pending.pop(id(out), None)
            if grad is None:
                continue
            out.accumulate_grad(grad)

            input_grads = function.backward(grad)
            for tensor, input_grad in zip(function.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor.node is None or tensor.node[0] is not self:
                    tensor.accumulate_grad(input_grad)
                elif id(tensor) in pending:
                    pending[id(tensor)] = pending[id(tensor)] + input_grad
                else:
                    pending[id(tensor)] = input_grad

        logger.debug("backward visited %d recorded operations", last + 1)


def backward(loss: Tensor) -> None:
    """Run the backward pass on the tape that produced `loss`."""
    if loss.node is None:
        raise GraphError("loss was not produced on an active tape (detached graph)")
    loss.node[0].backward(loss)


def as_tensor(value: Union[Tensor, ArrayLike], like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants as non-differentiable tensors in the precision of `like`."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)
