"""
Pyramidal feature extractor and region feature cropping.
"""

from dataclasses import dataclass
from typing import Iterator, List, Tuple

import numpy as np

from . import tensor as T
from .conv import bilinear_sample, upsample_nearest
from .errors import ShapeError
from .nn import Conv2d, Module, even_subgrid
from .tensor import Tensor

LEVELS = ("p2", "p3", "p4", "p5")


@dataclass
class PyramidFeatures:
    """Feature maps at strides 4, 8, 16 and 32, all with the same channel count."""

    p2: Tensor
    p3: Tensor
    p4: Tensor
    p5: Tensor

    def levels(self) -> List[Tensor]:
        return [self.p2, self.p3, self.p4, self.p5]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.levels())

    @property
    def channels(self) -> int:
        return self.p2.shape[0]

    def shapes(self) -> List[Tuple[int, ...]]:
        return [p.shape for p in self.levels()]


@dataclass(frozen=True)
class RegionBox:
    """Axis-aligned box in image pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float
    instance_id: int = 0

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def validate(self, height: int, width: int) -> None:
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ShapeError(f"degenerate box {self.as_list()}")
        if self.x0 < 0 or self.y0 < 0 or self.x1 > width or self.y1 > height:
            raise ShapeError(f"box {self.as_list()} outside {width}x{height} image")

    def as_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def iou(self, other: "RegionBox") -> float:
        ix = max(0.0, min(self.x1, other.x1) - max(self.x0, other.x0))
        iy = max(0.0, min(self.y1, other.y1) - max(self.y0, other.y0))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


class ResidualStage(Module):
    """Two 3x3 convolutions halving the resolution, with a sub-grid skip."""

    def __init__(self, rng: np.random.Generator, channels: int, bias: bool):
        self.conv1 = Conv2d(rng, channels, channels, stride=2, bias=bias)
        self.conv2 = Conv2d(rng, channels, channels, bias=bias)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(T.relu(self.conv1(x)))
        return T.relu(T.add(y, even_subgrid(x)))


class Backbone(Module):
    """
    Stem, four residual stages and a top-down lateral pathway.

    A (3, H, W) image yields levels at H/4, H/8, H/16 and H/32.
    """

    def __init__(self, rng: np.random.Generator, channels: int = 16, bias: bool = True):
        self.stem = Conv2d(rng, 3, channels, stride=2, bias=bias)
        self.stages = [ResidualStage(rng, channels, bias) for _ in LEVELS]
        self.laterals = [
            Conv2d(rng, channels, channels, kernel=1, bias=bias) for _ in LEVELS
        ]
        self._channels = channels

    def __call__(self, image: Tensor) -> PyramidFeatures:
        return forward_pyramid(self, image)


def forward_pyramid(backbone: Backbone, image: Tensor) -> PyramidFeatures:
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a (3,H,W) image, got {image.shape}")
    _, h, w = image.shape
    if h % 32 or w % 32:
        raise ShapeError(f"image extents must be divisible by 32, got {h}x{w}")
    x = T.relu(backbone.stem(image))
    bottom_up = []
    for stage in backbone.stages:
        x = stage(x)
        bottom_up.append(x)
    top = backbone.laterals[3](bottom_up[3])
    outputs = [top]
    for i in (2, 1, 0):
        top = T.add(backbone.laterals[i](bottom_up[i]), upsample_nearest(top, 2))
        outputs.append(top)
    p5, p4, p3, p2 = outputs
    return PyramidFeatures(p2=p2, p3=p3, p4=p4, p5=p5)


def region_grid(
    box: RegionBox, out: Tuple[int, int], spatial_scale: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Feature-map coordinates of the output cell centres of a box."""
    hr, wr = out
    ys = box.y0 + (np.arange(hr) + 0.5) * box.height / hr
    xs = box.x0 + (np.arange(wr) + 0.5) * box.width / wr
    yy, xx = np.meshgrid(ys * spatial_scale - 0.5, xs * spatial_scale - 0.5, indexing="ij")
    return yy, xx


def crop_region(
    feat: Tensor, box: RegionBox, out: Tuple[int, int], spatial_scale: float = 1.0
) -> Tensor:
    """
    Bilinearly sample a fixed-size region from a (C, H, W) feature map.

    Args:
        feat: Feature map
        box: Region in image coordinates
        out: Output extent (Hr, Wr)
        spatial_scale: Feature cells per image pixel

    Returns:
        Tensor of shape (C, Hr, Wr)
    """
    if not (box.x1 > box.x0 and box.y1 > box.y0):
        raise ShapeError(f"degenerate box {box.as_list()}")
    yy, xx = region_grid(box, out, spatial_scale)
    return bilinear_sample(feat, yy, xx)
