"""
Parameter containers and the small layers every network in ktnet is made of.
"""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .conv import conv2d
from .errors import CheckpointError, ShapeError
from .tensor import Tensor


class Module:
    """
    Base class for anything holding trainable tensors.

    Parameters are discovered from instance attributes: a ``Tensor`` with
    ``requires_grad``, a nested ``Module``, or a list of either. Names are
    dotted attribute paths in definition order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        seen = set()
        for name, value in self._walk(prefix):
            if id(value) in seen:
                continue
            seen.add(id(value))
            yield name, value

    def _walk(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            yield from _walk_value(f"{prefix}{attr}", value)

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Copy values from ``state`` into this module's parameters.

        Raises:
            CheckpointError: listing every missing, unexpected or mis-shaped tensor
        """
        own = dict(self.named_parameters())
        problems = []
        for name in own:
            if name not in state:
                problems.append(f"missing {name}")
            elif tuple(state[name].shape) != own[name].shape:
                problems.append(
                    f"shape {name}: checkpoint {tuple(state[name].shape)} "
                    f"vs model {own[name].shape}"
                )
        for name in state:
            if name not in own:
                problems.append(f"unexpected {name}")
        if problems:
            raise CheckpointError("incompatible checkpoint: " + "; ".join(problems))
        for name, p in own.items():
            p.data = np.array(state[name], dtype=np.float64)
            p.grad = None


def _walk_value(name: str, value) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value._walk(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_value(f"{name}.{i}", item)


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    return T.parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))


def even_subgrid(x: Tensor) -> Tensor:
    """Keep the (even row, even column) cells of the last two axes."""
    key = (slice(None),) * (x.ndim - 2) + (slice(None, None, 2), slice(None, None, 2))
    return T.take(x, key)


class Conv2d(Module):
    """
    Square-kernel convolution with "same" padding by default.

    ``stride=2`` is a stride-1 convolution followed by even sub-grid
    selection, which keeps odd kernels legal on even extents.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        dilation: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        padding_mode: str = "zeros",
    ):
        if stride not in (1, 2):
            raise ShapeError(f"Conv2d supports stride 1 or 2, got {stride}")
        self.weight = he_normal(
            rng, (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel
        )
        self.bias = T.parameter(np.zeros(out_channels)) if bias else None
        self._stride = stride
        self._dilation = dilation
        self._padding = dilation * (kernel - 1) // 2 if padding is None else padding
        self._padding_mode = padding_mode

    def __call__(self, x: Tensor) -> Tensor:
        single = x.ndim == 3
        if single:
            x = T.reshape(x, (1,) + x.shape)
        out = conv2d(
            x,
            self.weight,
            self.bias,
            stride=1,
            dilation=self._dilation,
            padding=self._padding,
            padding_mode=self._padding_mode,
        )
        if self._stride == 2:
            out = even_subgrid(out)
        if single:
            out = T.reshape(out, out.shape[1:])
        return out


def pixel_linear(weight: Tensor, feat: Tensor) -> Tensor:
    """
    Apply a (K, D) matrix at every cell of a (D, H, W) feature map.

    Returns:
        Tensor of shape (K, H, W)
    """
    d, h, w = feat.shape
    if weight.ndim != 2 or weight.shape[1] != d:
        raise ShapeError(
            f"pixel_linear: weight {weight.shape} cannot map {d}-channel features"
        )
    flat = T.reshape(feat, (d, h * w))
    return T.reshape(T.matmul(weight, flat), (weight.shape[0], h, w))


def zero_(module: Module) -> None:
    """Set every parameter of ``module`` to zero in place."""
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
