#!/usr/bin/env python3
"""
Procedural scenes of articulated figures with dense correspondence truth.

Each figure is a posed set of part rectangles on a noisy background with
distractor shapes. Dense maps (instance, surface, U, V) are kept for
evaluation; each instance also carries a sparse set of annotated points whose
surface distribution follows an imbalanced profile.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import body
from .backbone import RegionBox
from .config import DataConfig
from .errors import SynthError

# z-order of parts inside one figure; later parts are drawn on top
DRAW_ORDER = (
    "torso",
    "head",
    "right_upper_leg",
    "left_upper_leg",
    "right_lower_leg",
    "left_lower_leg",
    "right_foot",
    "left_foot",
    "right_upper_arm",
    "left_upper_arm",
    "right_lower_arm",
    "left_lower_arm",
    "right_hand",
    "left_hand",
)

PART_COLOURS = np.array(
    [
        [0.95, 0.80, 0.60],  # head
        [0.20, 0.45, 0.85],  # torso
        [0.85, 0.25, 0.25],  # right_upper_arm
        [0.25, 0.75, 0.30],  # left_upper_arm
        [0.95, 0.55, 0.15],  # right_lower_arm
        [0.15, 0.80, 0.75],  # left_lower_arm
        [0.95, 0.20, 0.65],  # right_hand
        [0.55, 0.95, 0.20],  # left_hand
        [0.55, 0.20, 0.75],  # right_upper_leg
        [0.80, 0.80, 0.15],  # left_upper_leg
        [0.35, 0.25, 0.55],  # right_lower_leg
        [0.60, 0.50, 0.20],  # left_lower_leg
        [0.10, 0.10, 0.35],  # right_foot
        [0.35, 0.10, 0.10],  # left_foot
    ]
)

MIN_VISIBLE_PIXELS = 12


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    n_instances: int = 2
    occlusion: float = 0.3
    scale_range: Tuple[float, float] = (0.45, 0.9)
    distractors: int = 3
    point_mean: float = 100.0
    point_std: float = 25.0
    point_max: int = 196

    @classmethod
    def from_data(cls, data: DataConfig) -> "SynthConfig":
        low, high = data.scale_range
        return cls(
            image_size=data.image_size,
            n_instances=data.n_instances,
            occlusion=data.occlusion,
            scale_range=(low, high),
            distractors=data.distractors,
            point_mean=data.point_mean,
            point_std=data.point_std,
            point_max=data.point_max,
        )


@dataclass(eq=False)
class InstanceAnnotation:
    """
    Ground truth for one visible figure.

    ``points`` rows are (x, y, surface, u, v) with x, y at pixel centres.
    ``keypoints`` rows are (x, y, visible).
    """

    box: RegionBox
    body_mask: np.ndarray
    part_mask: np.ndarray
    keypoints: np.ndarray
    points: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InstanceAnnotation):
            return NotImplemented
        return self.box == other.box and all(
            _same(getattr(self, k), getattr(other, k))
            for k in ("body_mask", "part_mask", "keypoints", "points")
        )


@dataclass(eq=False)
class SceneAnnotation:
    """
    One image with its instances and dense truth maps.

    ``instance_map`` holds instance index + 1 (0 for background);
    ``surface_map`` holds surface indices (0 for background).
    """

    image: np.ndarray
    instances: List[InstanceAnnotation]
    instance_map: np.ndarray
    surface_map: np.ndarray
    u_map: np.ndarray
    v_map: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneAnnotation):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.instances == other.instances
            and all(
                _same(getattr(self, k), getattr(other, k))
                for k in ("image", "instance_map", "surface_map", "u_map", "v_map")
            )
        )


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)


def value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth (3, size, size) noise: a random (cells+1)^2 lattice, bilinearly interpolated."""
    lattice = rng.random((3, cells + 1, cells + 1))
    coords = (np.arange(size) + 0.5) * cells / size
    i0 = np.minimum(np.floor(coords).astype(int), cells - 1)
    t = coords - i0
    rows = lattice[:, i0, :] * (1 - t)[None, :, None] + lattice[:, i0 + 1, :] * t[None, :, None]
    return rows[:, :, i0] * (1 - t)[None, None, :] + rows[:, :, i0 + 1] * t[None, None, :]


def random_angles(rng: np.random.Generator) -> dict:
    """Joint angles around the canonical pose."""
    a = body.CANONICAL_ANGLES
    angles = {"torso": a["torso"] + rng.normal(0.0, 0.12)}
    angles["head"] = angles["torso"] + rng.normal(0.0, 0.2)
    for side in ("left", "right"):
        upper = a[f"{side}_upper_arm"] + rng.uniform(-1.2, 1.2)
        angles[f"{side}_upper_arm"] = upper
        angles[f"{side}_lower_arm"] = upper + rng.uniform(-1.0, 1.0)
        leg = a[f"{side}_upper_leg"] + rng.uniform(-0.4, 0.4)
        angles[f"{side}_upper_leg"] = leg
        angles[f"{side}_lower_leg"] = leg + rng.uniform(-0.5, 0.5)
    return angles


def _pose_extent(pose: body.Pose) -> Tuple[np.ndarray, np.ndarray]:
    corners = np.concatenate(
        [body.quad_from_segment(s, e, w) for s, e, w in pose.segments.values()]
    )
    return corners.min(axis=0), corners.max(axis=0)


TEMPLATE_HEIGHT = float(np.subtract(*_pose_extent(body.Pose())[::-1])[1])


@dataclass
class _Figure:
    part: np.ndarray  # part index + 1, 0 where not covered
    surface: np.ndarray
    u: np.ndarray
    v: np.ndarray
    keypoints: np.ndarray  # (17, 2) pixel coordinates
    tint: np.ndarray


def render_figure(
    pose: body.Pose, origin: np.ndarray, scale: float, size: int, tint: np.ndarray
) -> _Figure:
    """Rasterize a posed figure into per-pixel part / surface / chart buffers."""
    part = np.zeros((size, size), dtype=np.int64)
    surface = np.zeros((size, size), dtype=np.int64)
    u = np.zeros((size, size))
    v = np.zeros((size, size))
    ys, xs = np.mgrid[0:size, 0:size]
    centres = np.stack([xs + 0.5, ys + 0.5], axis=-1)
    for name in DRAW_ORDER:
        start, end, width = pose.segments[name]
        s = origin + scale * start
        e = origin + scale * end
        w = scale * width
        axis = e - s
        length = float(np.hypot(*axis))
        unit = axis / length
        rel = centres - s
        along = rel @ unit / length
        lateral = rel @ body.normal(unit) / w + 0.5
        inside = (along >= 0) & (along <= 1) & (lateral >= 0) & (lateral <= 1)
        if not inside.any():
            continue
        surf, uu, vv = body.part_to_chart(name, along[inside], lateral[inside])
        part[inside] = body.PARTS.index(name) + 1
        surface[inside] = surf
        u[inside] = np.clip(uu, 0.0, 1.0)
        v[inside] = np.clip(vv, 0.0, 1.0)
    keypoints = origin + scale * pose.keypoint_array()
    return _Figure(part, surface, u, v, keypoints, tint)


def sample_point_indices(
    rng: np.random.Generator,
    pixel_surfaces: np.ndarray,
    mean: float = 100.0,
    std: float = 25.0,
    max_points: int = 196,
    profile: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Choose annotated pixels for one instance.

    The count is drawn from a rounded normal clipped to [1, max_points]; it
    is split over the surfaces present with probabilities proportional to
    ``profile``. Pixels are distinct within a surface until its pool runs
    out; a surface drawn more often than it has pixels repeats pixels, so
    small surfaces keep their share.

    Returns:
        Sorted indices into ``pixel_surfaces``
    """
    if pixel_surfaces.size == 0:
        return np.zeros(0, dtype=np.int64)
    weights = body.profile_weights() if profile is None else np.asarray(profile)
    n = int(np.clip(np.round(rng.normal(mean, std)), 1, max_points))
    present = np.unique(pixel_surfaces)
    p = weights[present]
    if p.sum() <= 0:
        return np.zeros(0, dtype=np.int64)
    counts = rng.multinomial(n, p / p.sum())
    chosen = []
    for s, k in zip(present, counts):
        if k == 0:
            continue
        pool = np.flatnonzero(pixel_surfaces == s)
        if k <= pool.size:
            chosen.append(rng.choice(pool, size=int(k), replace=False))
        else:
            chosen.append(np.concatenate([pool, rng.choice(pool, size=int(k) - pool.size)]))
    if not chosen:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen))


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    size = cfg.image_size
    image = 0.7 * value_noise(rng, size, 4) + 0.3 * value_noise(rng, size, 16)
    ys, xs = np.mgrid[0:size, 0:size]
    centres = np.stack([xs + 0.5, ys + 0.5], axis=-1)
    for _ in range(cfg.distractors):
        centre = rng.uniform(0, size, size=2)
        angle = rng.uniform(0, np.pi)
        length = rng.uniform(0.08, 0.3) * size
        width = rng.uniform(0.04, 0.12) * size
        unit = body.direction(angle)
        rel = centres - centre
        along = np.abs(rel @ unit) <= length / 2
        across = np.abs(rel @ body.normal(unit)) <= width / 2
        image[:, along & across] = rng.random(3)[:, None]
    return image


def _place(
    rng: np.random.Generator, cfg: SynthConfig, extents: List[Tuple[np.ndarray, np.ndarray]]
) -> List[np.ndarray]:
    size = cfg.image_size
    origins = []
    prev_centre: Optional[float] = None
    prev_width = 0.0
    for low, high in extents:
        width, height = high - low
        if prev_centre is None:
            cx = rng.uniform(min(width / 2, size / 2), max(size - width / 2, size / 2))
        else:
            gap = (1.0 - cfg.occlusion) * (prev_width + width) / 2
            sign = 1.0 if rng.random() < 0.5 else -1.0
            cx = prev_centre + sign * gap
            if not width / 2 <= cx <= size - width / 2:
                cx = prev_centre - sign * gap
        cy = rng.uniform(min(height / 2, size / 2), max(size - height / 2, size / 2))
        centre = np.array([cx, cy])
        origins.append(centre - (low + high) / 2)
        prev_centre, prev_width = cx, width
    return origins


def generate_scene(seed: int, cfg: SynthConfig = SynthConfig()) -> SceneAnnotation:
    """
    Generate one scene deterministically from ``seed``.

    Raises:
        SynthError: when no figure ends up with enough visible pixels
    """
    if cfg.n_instances < 1:
        raise SynthError("scene configuration has no instances")
    rng = np.random.default_rng(seed)
    size = cfg.image_size
    image = _background(rng, cfg)

    poses = []
    extents = []
    scales = []
    for _ in range(cfg.n_instances):
        pose = body.Pose(random_angles(rng))
        scale = rng.uniform(*cfg.scale_range) * size / TEMPLATE_HEIGHT
        low, high = _pose_extent(pose)
        poses.append(pose)
        scales.append(scale)
        extents.append((low * scale, high * scale))
    origins = _place(rng, cfg, extents)

    instance_map = np.zeros((size, size), dtype=np.int64)
    part_map = np.zeros((size, size), dtype=np.int64)
    surface_map = np.zeros((size, size), dtype=np.int64)
    u_map = np.zeros((size, size))
    v_map = np.zeros((size, size))
    figures = []
    for i, (pose, origin, scale) in enumerate(zip(poses, origins, scales)):
        tint = rng.uniform(0.85, 1.15, size=3)
        fig = render_figure(pose, origin, scale, size, tint)
        covered = fig.part > 0
        instance_map[covered] = i + 1
        part_map[covered] = fig.part[covered]
        surface_map[covered] = fig.surface[covered]
        u_map[covered] = fig.u[covered]
        v_map[covered] = fig.v[covered]
        figures.append(fig)

    # drop figures hidden below the visibility floor and renumber the rest
    keep = [i for i in range(len(figures)) if (instance_map == i + 1).sum() >= MIN_VISIBLE_PIXELS]
    if not keep:
        raise SynthError(f"scene {seed}: no instance has {MIN_VISIBLE_PIXELS} visible pixels")
    remap = np.zeros(len(figures) + 1, dtype=np.int64)
    for new, old in enumerate(keep):
        remap[old + 1] = new + 1
    instance_map = remap[instance_map]
    visible = instance_map > 0
    part_map[~visible] = 0
    surface_map[~visible] = 0
    u_map[~visible] = 0.0
    v_map[~visible] = 0.0

    _shade(rng, image, instance_map, part_map, surface_map, u_map, v_map, [figures[i] for i in keep])

    instances = []
    for new, old in enumerate(keep):
        instances.append(
            _annotate(rng, cfg, new, figures[old], instance_map, part_map, surface_map, u_map, v_map)
        )
    return SceneAnnotation(
        image=np.clip(image, 0.0, 1.0),
        instances=instances,
        instance_map=instance_map,
        surface_map=surface_map,
        u_map=u_map,
        v_map=v_map,
        seed=seed,
    )


def _shade(
    rng: np.random.Generator,
    image: np.ndarray,
    instance_map: np.ndarray,
    part_map: np.ndarray,
    surface_map: np.ndarray,
    u_map: np.ndarray,
    v_map: np.ndarray,
    figures: List[_Figure],
) -> None:
    first_surface = np.zeros(body.NUM_SURFACES, dtype=bool)
    for part in body.PARTS:
        surfaces = body.PART_SURFACES[part]
        if len(surfaces) == 2:
            first_surface[surfaces[0]] = True
    for k, fig in enumerate(figures):
        mask = instance_map == k + 1
        base = PART_COLOURS[part_map[mask] - 1] * fig.tint
        dim = np.where(first_surface[surface_map[mask]], 0.8, 1.0)[:, None]
        shade = 0.7 + 0.3 * u_map[mask][:, None]
        colour = base * dim * shade + 0.15 * (v_map[mask][:, None] - 0.5)
        colour += rng.normal(0.0, 0.02, size=colour.shape)
        image[:, mask] = colour.T


def _annotate(
    rng: np.random.Generator,
    cfg: SynthConfig,
    index: int,
    fig: _Figure,
    instance_map: np.ndarray,
    part_map: np.ndarray,
    surface_map: np.ndarray,
    u_map: np.ndarray,
    v_map: np.ndarray,
) -> InstanceAnnotation:
    size = cfg.image_size
    body_mask = instance_map == index + 1
    rows, cols = np.nonzero(body_mask)
    box = RegionBox(
        float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1), index
    )
    part_mask = np.where(body_mask, part_map, 0)

    keypoints = np.zeros((body.NUM_KEYPOINTS, 3))
    padded = np.pad(body_mask, 1)
    for k, (x, y) in enumerate(fig.keypoints):
        keypoints[k, :2] = (x, y)
        c, r = int(np.floor(x)), int(np.floor(y))
        if 0 <= r < size and 0 <= c < size and padded[r : r + 3, c : c + 3].any():
            keypoints[k, 2] = 1.0

    pick = sample_point_indices(
        rng, surface_map[rows, cols], cfg.point_mean, cfg.point_std, cfg.point_max
    )
    pr, pc = rows[pick], cols[pick]
    points = np.stack(
        [pc + 0.5, pr + 0.5, surface_map[pr, pc].astype(np.float64), u_map[pr, pc], v_map[pr, pc]],
        axis=1,
    ) if pick.size else np.zeros((0, 5))
    return InstanceAnnotation(box, body_mask, part_mask.astype(np.int64), keypoints, points)


def foreground_cells(instance_map: np.ndarray, stride: int = 4) -> np.ndarray:
    """Per-cell foreground label at ``stride``: 1 when at least half the pixels are people."""
    h, w = instance_map.shape
    fg = (instance_map > 0).astype(np.float64)
    pooled = fg.reshape(h // stride, stride, w // stride, stride).mean(axis=(1, 3))
    return (pooled >= 0.5).astype(np.int64)
