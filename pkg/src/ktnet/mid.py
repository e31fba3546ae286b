"""
Multi-instance decoder.

Refines a feature pyramid by fusing neighbouring levels in both directions,
unifies the refined levels with a weight-shared dilated convolution, and
gates the unified map with a learned foreground probability.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .backbone import PyramidFeatures
from .conv import conv2d, upsample_nearest
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Module, he_normal
from .rearrange import IFA, fa
from .tensor import Tensor

ICR_VARIANTS = ("off", "v1", "v2")


@dataclass
class MidOutput:
    refined: PyramidFeatures
    unified: Tensor
    seg_logits: Optional[Tensor]
    suppressed: Tensor
    gate: Optional[Tensor]


def _check_channels(pyr: PyramidFeatures) -> None:
    channels = {p.shape[0] for p in pyr.levels()}
    if len(channels) != 1:
        raise ShapeError(f"pyramid levels disagree on channels: {sorted(channels)}")


class CompletenessRefiner(Module):
    """
    Two-pass pyramid fusion.

    Downward: ``Q2 = P2``, ``Q_i = P_i + down(Q_{i-1})``.
    Upward: ``R5 = Q5``, ``R_{i-1} = Q_{i-1} + up(R_i)``.
    With ``v2`` the down map is ``fa`` plus a 1x1 projection and the up map is
    ``ifa``; ``v1`` uses a strided convolution and nearest upsampling + conv.
    """

    def __init__(
        self, rng: np.random.Generator, channels: int, variant: str = "v2", bias: bool = True
    ):
        if variant not in ("v1", "v2"):
            raise ConfigError(f"unknown refiner variant: {variant}")
        self._variant = variant
        c = channels
        if variant == "v2":
            self.down = [Conv2d(rng, 4 * c, c, kernel=1, bias=bias) for _ in range(3)]
            self.up = [IFA(rng, c, c, bias=bias) for _ in range(3)]
        else:
            self.down = [Conv2d(rng, c, c, stride=2, bias=bias) for _ in range(3)]
            self.up = [Conv2d(rng, c, c, bias=bias) for _ in range(3)]

    def _down(self, i: int, x: Tensor) -> Tensor:
        if self._variant == "v2":
            return self.down[i](fa(x))
        return self.down[i](x)

    def _up(self, i: int, x: Tensor) -> Tensor:
        if self._variant == "v2":
            return self.up[i](x)
        return self.up[i](upsample_nearest(x, 2))

    def __call__(self, pyr: PyramidFeatures) -> PyramidFeatures:
        return icr(self, pyr)


def icr(refiner: CompletenessRefiner, pyr: PyramidFeatures) -> PyramidFeatures:
    _check_channels(pyr)
    levels = pyr.levels()
    q = [levels[0]]
    for i in range(1, 4):
        q.append(T.add(levels[i], refiner._down(i - 1, q[i - 1])))
    r: List[Tensor] = [q[0], q[1], q[2], q[3]]
    for i in (3, 2, 1):
        r[i - 1] = T.add(q[i - 1], refiner._up(i - 1, r[i]))
    return PyramidFeatures(p2=r[0], p3=r[1], p4=r[2], p5=r[3])


class Trident(Module):
    """One 3x3 kernel applied at several dilation rates; branch outputs summed."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        dilations: Sequence[int] = (1, 2, 3),
        bias: bool = True,
    ):
        if not dilations:
            raise ConfigError("trident needs at least one dilation rate")
        self.weight = he_normal(
            rng, (out_channels, in_channels, 3, 3), in_channels * 9 * len(dilations)
        )
        self.bias = T.parameter(np.zeros(out_channels)) if bias else None
        self._dilations = tuple(dilations)

    def __call__(self, x: Tensor) -> Tensor:
        return trident(x, self.weight, self.bias, self._dilations)


def trident(
    x: Tensor, weight: Tensor, bias: Optional[Tensor], dilations: Sequence[int]
) -> Tensor:
    """Sum of reflect-padded dilated convolutions sharing ``weight``; (C,H,W) in."""
    if not dilations:
        raise ConfigError("trident needs at least one dilation rate")
    batch = T.reshape(x, (1,) + x.shape)
    branches = [
        conv2d(batch, weight, None, dilation=d, padding=d, padding_mode="reflect")
        for d in dilations
    ]
    out = T.add_n(branches)
    out = T.reshape(out, out.shape[1:])
    if bias is not None:
        out = T.add(out, T.expand(T.reshape(bias, (bias.shape[0], 1, 1)), out.shape))
    return out


def upsample_to_p2(refined: PyramidFeatures) -> Tensor:
    levels = refined.levels()
    scaled = [levels[0]] + [upsample_nearest(p, 2**i) for i, p in enumerate(levels) if i]
    return T.concat(scaled, axis=0)


def trident_unify(refined: PyramidFeatures, unify: Trident) -> Tensor:
    """Upsample every level to P2, concatenate, and apply the trident."""
    return unify(upsample_to_p2(refined))


class Strengthener(Module):
    """1x1 foreground/background classifier whose foreground probability gates features."""

    def __init__(self, rng: np.random.Generator, channels: int, bias: bool = True):
        self.classifier = Conv2d(rng, channels, 2, kernel=1, bias=bias)

    def __call__(self, unified: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        return strengthen(self, unified)


def strengthen(module: Strengthener, unified: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Returns:
        (seg_logits, suppressed, gate) where gate is the (1, H, W) foreground
        probability and suppressed = unified * gate
    """
    seg_logits = module.classifier(unified)
    gate = T.sigmoid(T.take(seg_logits, (slice(1, 2),)))
    suppressed = T.mul(unified, T.expand(gate, unified.shape))
    return seg_logits, suppressed, gate


class MultiInstanceDecoder(Module):
    """
    Refiner, trident unification and strengthening, each switchable.

    With ``icr="off"`` the unified map is a 1x1 projection of P2 and the
    pyramid passes through unchanged. With ``strengthen=False`` no gate or
    segmentation logits are produced.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        channels: int,
        unified_channels: int,
        icr: str = "v2",
        strengthen: bool = True,
        dilations: Sequence[int] = (1, 2, 3),
        bias: bool = True,
    ):
        if icr not in ICR_VARIANTS:
            raise ConfigError(f"model.icr must be one of {ICR_VARIANTS}, got {icr!r}")
        self._icr = icr
        self.refiner: Optional[CompletenessRefiner] = None
        self.unify: Optional[Trident] = None
        self.project: Optional[Conv2d] = None
        if icr == "off":
            self.project = Conv2d(rng, channels, unified_channels, kernel=1, bias=bias)
        else:
            self.refiner = CompletenessRefiner(rng, channels, icr, bias)
            self.unify = Trident(rng, 4 * channels, unified_channels, dilations, bias)
        self.strengthener = Strengthener(rng, unified_channels, bias) if strengthen else None

    def __call__(self, pyr: PyramidFeatures) -> MidOutput:
        if self.refiner is None:
            assert self.project is not None
            refined = pyr
            unified = self.project(pyr.p2)
        else:
            assert self.unify is not None
            refined = self.refiner(pyr)
            unified = trident_unify(refined, self.unify)
        if self.strengthener is None:
            return MidOutput(refined, unified, None, unified, None)
        seg_logits, suppressed, gate = self.strengthener(unified)
        return MidOutput(refined, unified, seg_logits, suppressed, gate)
