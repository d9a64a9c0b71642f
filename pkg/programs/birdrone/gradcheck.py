"""
Finite-difference checks of the hand-written backward rules, all in float64.

Each suite builds small random inputs from a seed and returns the maximum
relative error reported by grad_check. Offsets fed into deformable sampling are
kept away from integer positions (KINK_SHIFT), where bilinear interpolation is
not differentiable.
"""

import argparse
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from rich.console import Console

from engines.attention import MPDA, RMPDA, channel_attention, modulate, spatial_attention
from engines.backbone import AelanBlock, AelanConfig, ModelConfig, ablation_flags
from engines.detector import build_model
from engines.loss import compute_loss
from engines.nn import Module, OffsetBranch
from engines.targets import BatchTargets, build_batch_targets
from programs.birdrone.config import RunConfig
from programs.birdrone.tables import gradcheck_table
from tools.dataset.data import BIRD, DRONE, BoundingBox
from tools.tensor.gradcheck import KINK_SHIFT, grad_check, kink_safe_offsets
from tools.tensor.ops import DeformKernel, deform_conv2d
from tools.tensor.tensor import Tensor

logger = logging.getLogger(__name__)
console = Console()

VERIFICATION_FAILED = 3


@dataclass(frozen=True)
class GradcheckSuite:
    name: str
    check: Callable[[np.random.Generator], float]
    tolerance: float


def _projection(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    return Tensor(rng.normal(size=shape))


def check_dconv(rng: np.random.Generator) -> float:
    x = Tensor(rng.normal(size=(1, 3, 6, 6)))
    weight = Tensor(rng.normal(size=(4, 3, 3, 3)))
    bias = Tensor(rng.normal(size=4))
    offsets = kink_safe_offsets((1, 18, 6, 6), rng)
    projection = _projection(rng, (1, 4, 6, 6))

    def fn(x_: Tensor, w_: Tensor, off_: Tensor, b_: Tensor) -> Tensor:
        return (deform_conv2d(x_, DeformKernel(w_, b_), off_, padding=1) * projection).sum()

    return grad_check(fn, [x, weight, offsets, bias])


def check_spatial(rng: np.random.Generator) -> float:
    x = Tensor(rng.normal(size=(2, 4, 8, 8)))
    weight = Tensor(rng.normal(scale=0.3, size=(1, 2, 7, 7)))
    bias = Tensor(rng.normal(size=1))
    projection = _projection(rng, (2, 4, 8, 8))

    def fn(x_: Tensor, w_: Tensor, b_: Tensor) -> Tensor:
        return (modulate(x_, spatial_attention(x_, w_, b_)) * projection).sum()

    return grad_check(fn, [x, weight, bias])


def check_channel(rng: np.random.Generator) -> float:
    x = Tensor(rng.normal(size=(2, 8, 5, 5)))
    weight = Tensor(rng.normal(size=(1, 1, 3, 1)))
    bias = Tensor(rng.normal(size=1))
    projection = _projection(rng, (2, 8, 5, 5))

    def fn(x_: Tensor, w_: Tensor, b_: Tensor) -> Tensor:
        return (modulate(x_, channel_attention(x_, w_, b_)) * projection).sum()

    return grad_check(fn, [x, weight, bias])


def _block_check(block_type: type, rng: np.random.Generator) -> float:
    block = block_type(4, rng=rng)
    x = Tensor(rng.normal(size=(1, 4, 12, 12)))
    projection = _projection(rng, (1, 4, 12, 12))
    return grad_check(lambda t: (block(t) * projection).sum(), x)


def check_mpda(rng: np.random.Generator) -> float:
    return _block_check(MPDA, rng)


def check_rmpda(rng: np.random.Generator) -> float:
    return _block_check(RMPDA, rng)


def shift_offset_branches(module: Module, rng: np.random.Generator, scale: float = 1e-3) -> None:
    """Biases at KINK_SHIFT and tiny weights: live offsets that stay off the kinks."""
    for child in module.modules():
        if isinstance(child, OffsetBranch):
            child.bias.data[...] = KINK_SHIFT
            child.weight.data[...] = rng.normal(scale=scale, size=child.weight.shape)


def check_aelan(rng: np.random.Generator) -> float:
    block = AelanBlock(AelanConfig(8, 8, 8, csp_depth=2), rng=rng)
    shift_offset_branches(block, rng)
    x = Tensor(rng.normal(size=(1, 8, 12, 12)))
    projection = _projection(rng, (1, 8, 12, 12))
    return grad_check(lambda t: (block(t) * projection).sum(), x)


def _tiny_targets(image_size: int) -> BatchTargets:
    labels = [[BoundingBox(DRONE, 0.3, 0.35, 0.2, 0.25), BoundingBox(BIRD, 0.7, 0.6, 0.5, 0.4)]]
    return build_batch_targets(labels, image_size)


def check_loss(rng: np.random.Generator) -> float:
    image_size = 64
    targets = _tiny_targets(image_size)
    levels = [
        Tensor(rng.normal(scale=0.5, size=(1, 7, image_size // s, image_size // s)))
        for s in targets.strides
    ]
    return grad_check(lambda *raw: compute_loss(list(raw), targets, image_size).total, levels)


def check_model(rng: np.random.Generator, max_coords: int = 64) -> float:
    config = ModelConfig(
        image_size=64, stem_channels=4, widths=(8, 8, 8), csp_depth=1, flags=ablation_flags("m6")
    )
    model = build_model(config, seed=int(rng.integers(1 << 31)))
    shift_offset_branches(model, rng)
    targets = _tiny_targets(config.image_size)
    images = Tensor(rng.uniform(size=(1, 1, 64, 64)))
    return grad_check(
        lambda x: compute_loss(model(x), targets, config.image_size).total,
        images,
        max_coords=max_coords,
        seed=int(rng.integers(1 << 31)),
    )


SUITES: dict[str, GradcheckSuite] = {
    suite.name: suite
    for suite in (
        GradcheckSuite("dconv", check_dconv, 1e-5),
        GradcheckSuite("spatial", check_spatial, 1e-5),
        GradcheckSuite("channel", check_channel, 1e-5),
        GradcheckSuite("mpda", check_mpda, 1e-4),
        GradcheckSuite("rmpda", check_rmpda, 1e-4),
        GradcheckSuite("aelan", check_aelan, 1e-4),
        GradcheckSuite("loss", check_loss, 1e-5),
        GradcheckSuite("model", check_model, 1e-3),
    )
}


def run_suites(names: list[str], seed: int = 0) -> list[tuple[str, float, float]]:
    results = []
    for name in names:
        suite = SUITES[name]
        error = suite.check(np.random.default_rng(seed))
        level = logging.INFO if error < suite.tolerance else logging.ERROR
        logger.log(level, "gradcheck %s: max relative error %.3e (tolerance %.0e)", name, error, suite.tolerance)
        results.append((name, error, suite.tolerance))
    return results


def add_parser(subparsers: argparse._SubParsersAction) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("gradcheck", help="Verify backward rules by finite differences")
    parser.add_argument("--module", choices=[*SUITES, "all"], default="all", help="Suite to run")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=cmd_gradcheck)
    return parser


def cmd_gradcheck(config: RunConfig) -> int:
    module = config.get("module")
    names = list(SUITES) if module == "all" else [module]
    results = run_suites(names, config.get("seed"))
    console.print(gradcheck_table(results))
    failed = [name for name, error, tolerance in results if not error < tolerance]
    if failed:
        console.print(f"[bold red]gradcheck failed: {', '.join(failed)}[/bold red]")
        return VERIFICATION_FAILED
    return 0
