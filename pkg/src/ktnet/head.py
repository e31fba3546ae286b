#!/usr/bin/env python3
"""
Dense correspondence head.

Region features pass through a stack of 3x3 convolutions; six pixel-wise
1x1 maps then give body, part, keypoint, surface, U and V outputs. The
surface classifier rows come from the knowledge transfer machine when it is
enabled, otherwise from the head's own ``w_s``.
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import body
from . import tensor as T
from .backbone import RegionBox
from .config import LossConfig
from .errors import ShapeError
from .ktm import ParserWeights
from .losses import IGNORE, pixel_ce, smooth_l1
from .nn import Conv2d, Module, pixel_linear
from .synth import SceneAnnotation
from .tensor import Tensor

BODY_THRESHOLD = 0.5
LOSS_TERMS = ("body", "part", "keypoint", "surface", "uv", "instance")


class DensePoseHead(Module):
    """Conv stack plus the body, U and V maps; ``w_s`` only without knowledge transfer."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        dim: int,
        convs: int = 8,
        with_surface: bool = False,
        bias: bool = True,
    ):
        self.stack = [
            Conv2d(rng, in_channels if i == 0 else dim, dim, kernel=3, bias=bias)
            for i in range(convs)
        ]
        std = 1.0 / np.sqrt(dim)
        self.w_b = T.parameter(rng.normal(0.0, std, size=(2, dim)))
        self.w_u = T.parameter(rng.normal(0.0, std, size=(body.NUM_SURFACES, dim)))
        self.w_v = T.parameter(rng.normal(0.0, std, size=(body.NUM_SURFACES, dim)))
        self.w_s: Optional[Tensor] = None
        if with_surface:
            self.w_s = T.parameter(rng.normal(0.0, std, size=(body.NUM_SURFACES, dim)))
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def features(self, x: Tensor) -> Tensor:
        for conv in self.stack:
            x = T.relu(conv(x))
        return x


@dataclass
class HeadOutput:
    p_b: Tensor
    p_bp: Tensor
    p_k: Tensor
    p_s: Tensor
    p_u: Tensor
    p_v: Tensor
    features: Tensor
    instance_logits: Tensor

    @property
    def extent(self) -> Tuple[int, int]:
        return self.p_b.shape[1], self.p_b.shape[2]


def forward_head(
    region_feat: Tensor, head: DensePoseHead, parsers: ParserWeights, w_s: Tensor
) -> HeadOutput:
    """
    Run the head on one (D0, Hr, Wr) region.

    Raises:
        ShapeError: when ``w_s`` does not have one D-dimensional row per surface
    """
    if w_s.shape != (body.NUM_SURFACES, head.dim):
        raise ShapeError(
            f"surface weights {w_s.shape} do not match ({body.NUM_SURFACES}, {head.dim})"
        )
    if region_feat.ndim != 3:
        raise ShapeError(f"head expects a (C, H, W) region, got {region_feat.shape}")
    f = head.features(region_feat)
    d = f.shape[0]
    pooled = T.reshape(T.reduce_mean(T.reshape(f, (d, -1)), axis=1), (d, 1))
    return HeadOutput(
        p_b=pixel_linear(head.w_b, f),
        p_bp=pixel_linear(parsers.w_part, f),
        p_k=pixel_linear(parsers.w_kpt, f),
        p_s=pixel_linear(w_s, f),
        p_u=pixel_linear(head.w_u, f),
        p_v=pixel_linear(head.w_v, f),
        features=f,
        instance_logits=T.reshape(T.matmul(parsers.w_loc, pooled), (2,)),
    )


@dataclass
class InstanceTargets:
    """Supervision for one region on its (Hr, Wr) grid; ``IGNORE`` marks unlabeled cells."""

    body: np.ndarray
    part: np.ndarray
    keypoint: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    surface: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def n_points(self) -> int:
        return int(self.surface.size)

    @property
    def empty(self) -> bool:
        return self.n_points == 0 and not (self.body == 1).any()

    def with_points(self, index: np.ndarray) -> "InstanceTargets":
        """Same dense targets, annotated points replaced by rows ``index`` (repeats allowed)."""
        return replace(
            self,
            rows=self.rows[index],
            cols=self.cols[index],
            surface=self.surface[index],
            u=self.u[index],
            v=self.v[index],
        )


def cell_index(coord: np.ndarray, start: float, extent: float, cells: int) -> np.ndarray:
    """Grid cell containing image coordinate ``coord`` inside [start, start + extent)."""
    idx = np.floor((np.asarray(coord, dtype=np.float64) - start) / extent * cells)
    return np.clip(idx, 0, cells - 1).astype(np.int64)


def cell_centres(box: RegionBox, size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Image coordinates (ys, xs) of the cell centres of ``box`` on a grid of ``size``."""
    hr, wr = size
    ys = box.y0 + (np.arange(hr) + 0.5) * box.height / hr
    xs = box.x0 + (np.arange(wr) + 0.5) * box.width / wr
    return ys, xs


def rasterize_instance(
    scene: SceneAnnotation, index: int, box: RegionBox, size: Tuple[int, int]
) -> InstanceTargets:
    """Project instance ``index`` of ``scene`` onto the grid of ``box``."""
    inst = scene.instances[index]
    hr, wr = size
    ys, xs = cell_centres(box, size)
    r = np.clip(np.floor(ys).astype(np.int64), 0, scene.height - 1)
    c = np.clip(np.floor(xs).astype(np.int64), 0, scene.width - 1)
    body_t = inst.body_mask[np.ix_(r, c)].astype(np.int64)
    part_t = np.where(body_t == 1, inst.part_mask[np.ix_(r, c)] - 1, IGNORE)

    keypoint_t = np.full((hr, wr), IGNORE, dtype=np.int64)
    for k, (x, y, visible) in enumerate(inst.keypoints):
        if not visible or not (box.x0 <= x < box.x1 and box.y0 <= y < box.y1):
            continue
        kr = int(cell_index(y, box.y0, box.height, hr))
        kc = int(cell_index(x, box.x0, box.width, wr))
        # radius-1 disk: the cell and its 4-neighbours
        for dr, dc in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            if 0 <= kr + dr < hr and 0 <= kc + dc < wr:
                keypoint_t[kr + dr, kc + dc] = k

    pts = inst.points
    inside = (
        (pts[:, 0] >= box.x0) & (pts[:, 0] < box.x1) & (pts[:, 1] >= box.y0) & (pts[:, 1] < box.y1)
    )
    pts = pts[inside]
    return InstanceTargets(
        body=body_t,
        part=part_t.astype(np.int64),
        keypoint=keypoint_t,
        rows=cell_index(pts[:, 1], box.y0, box.height, hr),
        cols=cell_index(pts[:, 0], box.x0, box.width, wr),
        surface=pts[:, 2].astype(np.int64),
        u=pts[:, 3].copy(),
        v=pts[:, 4].copy(),
    )


def _zero(x: Tensor) -> Tensor:
    return T.scale(T.reduce_sum(x), 0.0)


def point_losses(
    out: HeadOutput, targets: InstanceTargets, class_weights: Optional[np.ndarray] = None
) -> Tuple[Tensor, Tensor]:
    """Surface cross-entropy and U/V smooth-L1, both restricted to annotated points."""
    if targets.n_points == 0:
        # zero losses still reach w_s, w_u and w_v
        return _zero(out.p_s), T.add(_zero(out.p_u), _zero(out.p_v))
    rows, cols, surf = targets.rows, targets.cols, targets.surface
    gathered = T.take(out.p_s, (slice(None), rows, cols))
    surface = pixel_ce(gathered, surf, weights=class_weights)
    u = T.take(out.p_u, (surf, rows, cols))
    v = T.take(out.p_v, (surf, rows, cols))
    uv = T.add(smooth_l1(u, targets.u), smooth_l1(v, targets.v))
    return surface, uv


def compute_losses(
    out: HeadOutput,
    targets: Optional[InstanceTargets],
    cfg: LossConfig,
    class_weights: Optional[np.ndarray] = None,
    instance_target: int = 0,
) -> Tuple[Tensor, Dict[str, float]]:
    """
    Weighted sum of the head losses for one region.

    ``targets=None`` marks a background region: only the instance term
    applies. An instance with neither body cells nor points adds
    nothing beyond that term.

    Returns:
        (total, breakdown) with the unweighted value of every term
    """
    logits = T.reshape(out.instance_logits, (2, 1))
    instance = pixel_ce(logits, np.array([instance_target]))
    terms: Dict[str, Tensor] = {"instance": instance}
    if targets is not None and not targets.empty:
        terms["body"] = pixel_ce(out.p_b, targets.body)
        terms["part"] = pixel_ce(out.p_bp, targets.part)
        terms["keypoint"] = pixel_ce(out.p_k, targets.keypoint)
        terms["surface"], terms["uv"] = point_losses(out, targets, class_weights)
    weights = {
        "body": cfg.body,
        "part": cfg.part,
        "keypoint": cfg.keypoint,
        "surface": cfg.surface,
        "uv": cfg.uv,
        "instance": cfg.instance,
    }
    total = T.add_n([T.scale(t, weights[name]) for name, t in terms.items()])
    breakdown = {name: float(terms[name].item()) if name in terms else 0.0 for name in LOSS_TERMS}
    return total, breakdown


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


@dataclass
class InstancePrediction:
    """
    Decoded dense prediction over a box.

    ``surface`` is the best body surface of every cell; cells with
    ``body_prob`` below 0.5 are background when looked up. ``keypoints``
    rows are (x, y, score) in image coordinates.
    """

    box: RegionBox
    instance_id: int
    score: float
    body_prob: np.ndarray
    surface: np.ndarray
    u: np.ndarray
    v: np.ndarray
    keypoints: np.ndarray

    def lookup(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, ...]:
        """
        Predicted (surface, u, v) at image coordinates; points outside the
        box or the predicted body get surface 0.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        hr, wr = self.surface.shape
        inside = (x >= self.box.x0) & (x < self.box.x1) & (y >= self.box.y0) & (y < self.box.y1)
        r = cell_index(y, self.box.y0, self.box.height, hr)
        c = cell_index(x, self.box.x0, self.box.width, wr)
        in_body = inside & (self.body_prob[r, c] >= BODY_THRESHOLD)
        surface = np.where(in_body, self.surface[r, c], 0)
        return surface, self.u[r, c], self.v[r, c]


def decode_prediction(out: HeadOutput, box: RegionBox) -> InstancePrediction:
    """Turn head outputs into a hard prediction for ``box``."""
    body_prob = _softmax(out.p_b.data)[1]
    # channel 0 is background; only the 24 body surfaces compete
    surface = np.argmax(out.p_s.data[1:], axis=0) + 1
    r, c = np.indices(surface.shape)
    u = np.clip(out.p_u.data[surface, r, c], 0.0, 1.0)
    v = np.clip(out.p_v.data[surface, r, c], 0.0, 1.0)

    ys, xs = cell_centres(box, surface.shape)
    heat = _softmax(out.p_k.data) * body_prob
    keypoints = np.zeros((body.NUM_KEYPOINTS, 3))
    for k in range(body.NUM_KEYPOINTS):
        kr, kc = np.unravel_index(np.argmax(heat[k]), heat[k].shape)
        keypoints[k] = (xs[kc], ys[kr], heat[k, kr, kc])

    score = float(_softmax(out.instance_logits.data)[0])
    return InstancePrediction(box, box.instance_id, score, body_prob, surface, u, v, keypoints)


def prediction_record(pred: InstancePrediction, image_index: int) -> Dict:
    """One line of the prediction interchange file; grids are row-major lists."""
    return {
        "image": image_index,
        "instance_id": pred.instance_id,
        "box": pred.box.as_list(),
        "score": pred.score,
        "size": list(pred.surface.shape),
        "body_prob": pred.body_prob.ravel().tolist(),
        "surface": pred.surface.ravel().tolist(),
        "u": pred.u.ravel().tolist(),
        "v": pred.v.ravel().tolist(),
        "keypoints": pred.keypoints.tolist(),
    }


def stack_breakdowns(breakdowns: List[Dict[str, float]]) -> Dict[str, float]:
    """Mean of each term over regions."""
    if not breakdowns:
        return {name: 0.0 for name in LOSS_TERMS}
    return {name: float(np.mean([b[name] for b in breakdowns])) for name in LOSS_TERMS}
