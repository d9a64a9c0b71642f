"""
Finite-difference verification of backward rules.

grad_check compares the tape's gradient of a scalar function against central
differences and returns the worst relative error

    |analytic - numeric| / max(1, |analytic|, |numeric|)

over every checked input coordinate.
"""

import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np

from tools.tensor.tensor import Tape, Tensor, TensorError

logger = logging.getLogger(__name__)

# fractional part given to offsets so sampling stays away from integer kinks
KINK_SHIFT = 0.25


def _scalar(value: Tensor) -> float:
    if value.size != 1:
        raise TensorError(f"grad_check needs a scalar function, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Args:
        fn: maps the inputs to a scalar tensor
        inputs: one tensor or several; must be float64
        eps: central difference step
        max_coords: check a seeded random subset of at most this many coordinates
            per input instead of all of them
        seed: seed for the coordinate subset

    Returns:
        float: the maximum relative error
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for tensor in tensors:
        if tensor.dtype != np.float64:
            raise TensorError(f"grad_check needs float64 inputs, got {tensor.dtype}")
        tensor.requires_grad = True
        tensor.zero_grad()

    with Tape() as tape:
        loss = fn(*tensors)
    _scalar(loss)
    tape.backward(loss)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for position, (tensor, grad) in enumerate(zip(tensors, analytic)):
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))

        grad_flat = grad.reshape(-1)
        for coord in coords:
            original = flat[coord]
            flat[coord] = original + eps
            plus = _scalar(fn(*tensors))
            flat[coord] = original - eps
            minus = _scalar(fn(*tensors))
            flat[coord] = original

            numeric = (plus - minus) / (2 * eps)
            exact = float(grad_flat[coord])
            error = abs(exact - numeric) / max(1.0, abs(exact), abs(numeric))
            if error > worst:
                worst = error
                logger.debug(
                    "input %d coord %d: analytic %.6g numeric %.6g", position, coord, exact, numeric
                )
    return worst


def kink_safe_offsets(
    shape: tuple[int, ...],
    rng: np.random.Generator,
    spread: int = 1,
    jitter: float = 0.1,
) -> Tensor:
    """
    Offsets of integer part in [-spread, spread], fractional part KINK_SHIFT
    plus uniform jitter, so no sampling position sits on an integer.
    """
    whole = rng.integers(-spread, spread + 1, size=shape).astype(np.float64)
    fraction = KINK_SHIFT + rng.uniform(-jitter, jitter, size=shape)
    return Tensor(whole + fraction)
