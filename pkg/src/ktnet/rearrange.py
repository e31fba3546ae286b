"""
Parity sub-grid rearranging.

``fa`` folds a (C, H, W) map into (4C, H/2, W/2) by stacking its four
parity sub-grids; ``ifa`` goes the other way with one learned convolution per
sub-grid. Both use ``PARITY_ORDER``.
"""

from typing import Callable, List, Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Conv2d, Module
from .tensor import Tensor

# (row parity, column parity) of channel blocks 0..3
PARITY_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))


def fa(t: Tensor) -> Tensor:
    """
    Stack the four parity sub-grids of ``t`` along the channel axis.

    Channel block k holds sub-grid ``PARITY_ORDER[k]``. No arithmetic is
    performed; the output is a permutation of the input.
    """
    if t.ndim != 3:
        raise ShapeError(f"fa expects (C,H,W), got {t.shape}")
    c, h, w = t.shape
    if h % 2 or w % 2:
        raise ShapeError(f"fa needs even extents, got {h}x{w}")
    blocks = T.reshape(t, (c, h // 2, 2, w // 2, 2))
    return T.reshape(T.transpose(blocks, (2, 4, 0, 1, 3)), (4 * c, h // 2, w // 2))


def fa_inverse(t: Tensor) -> Tensor:
    """Exact inverse of ``fa``: (4C, H, W) -> (C, 2H, 2W)."""
    if t.ndim != 3:
        raise ShapeError(f"fa_inverse expects (4C,H,W), got {t.shape}")
    c4, h, w = t.shape
    if c4 % 4:
        raise ShapeError(f"fa_inverse needs a channel count divisible by 4, got {c4}")
    blocks = T.reshape(t, (2, 2, c4 // 4, h, w))
    return T.reshape(T.transpose(blocks, (2, 3, 0, 4, 1)), (c4 // 4, 2 * h, 2 * w))


def ifa(t: Tensor, branches: Sequence[Callable[[Tensor], Tensor]]) -> Tensor:
    """
    Upsample ``t`` to twice its resolution.

    Branch k predicts the values of parity sub-grid ``PARITY_ORDER[k]``.

    Args:
        t: Tensor of shape (C, H, W)
        branches: Four maps from (C, H, W) to (C', H, W)

    Returns:
        Tensor of shape (C', 2H, 2W)
    """
    if len(branches) != 4:
        raise ShapeError(f"ifa needs four branches, got {len(branches)}")
    outputs: List[Tensor] = [branch(t) for branch in branches]
    shapes = {o.shape for o in outputs}
    if len(shapes) != 1:
        raise ShapeError(f"ifa branch outputs disagree: {sorted(shapes)}")
    return fa_inverse(T.concat(outputs, axis=0))


def parity_subgrid(x: np.ndarray, k: int) -> np.ndarray:
    """Read sub-grid ``PARITY_ORDER[k]`` from the last two axes of an array."""
    r, c = PARITY_ORDER[k]
    return x[..., r::2, c::2]


class IFA(Module):
    """Learned 2x upsampling with four 3x3 branch convolutions."""

    def __init__(
        self, rng: np.random.Generator, in_channels: int, out_channels: int, bias: bool = True
    ):
        self.branches = [
            Conv2d(rng, in_channels, out_channels, kernel=3, padding=1, bias=bias)
            for _ in PARITY_ORDER
        ]

    def __call__(self, t: Tensor) -> Tensor:
        return ifa(t, self.branches)
