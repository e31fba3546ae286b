#!/usr/bin/env python3
"""
Evaluation: point and keypoint similarities, COCO-style AP/AR sweeps,
per-category dense statistics and ground-truth substitution.
"""

import csv
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import body
from .backbone import RegionBox
from .errors import MetricError
from .head import InstancePrediction
from .synth import SceneAnnotation
from .utils import data_file

KAPPA = 0.255
THRESHOLDS = np.round(0.5 + 0.05 * np.arange(10), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MEDIUM_AREA = 32.0**2
LARGE_AREA = 96.0**2

# (x, y) -> (surface, u, v)
Lookup = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def load_sigmas(path: Optional[Path] = None) -> np.ndarray:
    with open(path or data_file("oks_sigmas.toml"), "rb") as f:
        sigmas = np.asarray(tomllib.load(f)["sigmas"], dtype=np.float64)
    if sigmas.shape != (body.NUM_KEYPOINTS,):
        raise MetricError(f"expected {body.NUM_KEYPOINTS} keypoint sigmas, got {sigmas.size}")
    return sigmas


def gps(points: np.ndarray, lookup: Lookup, kappa: float = KAPPA) -> Optional[float]:
    """
    Geodesic point similarity of one prediction against annotated points.

    Args:
        points: (P, 5) rows of (x, y, surface, u, v)
        lookup: Predicted (surface, u, v) at image coordinates

    Returns:
        Mean of exp(-d^2 / (2 kappa^2)) over the points, or None without points
    """
    if len(points) == 0:
        return None
    surface, u, v = lookup(points[:, 0], points[:, 1])
    d = body.geodesic_distance(surface, u, v, points[:, 2].astype(np.int64), points[:, 3], points[:, 4])
    return float(np.mean(np.exp(-(d**2) / (2.0 * kappa**2))))


def oks(
    gt: np.ndarray, pred: np.ndarray, area: float, sigmas: Optional[np.ndarray] = None
) -> Optional[float]:
    """
    Object keypoint similarity; ``gt`` rows are (x, y, visible).

    Returns:
        Mean over visible joints of exp(-d^2 / (2 area k^2)) with k = 2 sigma,
        or None when no joint is visible
    """
    sigmas = load_sigmas() if sigmas is None else sigmas
    visible = gt[:, 2] > 0
    if not visible.any():
        return None
    d2 = ((pred[:, :2] - gt[:, :2]) ** 2).sum(axis=1)
    k2 = (2.0 * sigmas) ** 2
    e = d2 / (2.0 * max(area, np.finfo(float).eps) * k2)
    return float(np.mean(np.exp(-e[visible])))


@dataclass
class ImageMatches:
    """Similarities of every (gt, prediction) pair of one image."""

    similarity: np.ndarray  # (G, P)
    scores: np.ndarray  # (P,)
    gt_areas: np.ndarray  # (G,)
    pred_areas: np.ndarray  # (P,)


def match_image(
    image: ImageMatches, threshold: float, area_range: Tuple[float, float]
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Greedy matching at one threshold.

    Predictions are visited by descending score; each takes the available
    gt of highest similarity >= threshold, non-ignored gts first, lower gt
    index on ties. Gts outside ``area_range`` are ignored, as are their
    matches and unmatched predictions outside the range.

    Returns:
        (matched, ignored) per prediction in visiting order, and the number
        of non-ignored gts
    """
    low, high = area_range
    gt_ignore = (image.gt_areas < low) | (image.gt_areas >= high)
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    pred_order = np.argsort(-image.scores, kind="mergesort")
    taken = np.zeros(len(gt_ignore), dtype=bool)
    matched = np.zeros(len(pred_order), dtype=bool)
    ignored = np.zeros(len(pred_order), dtype=bool)
    for i, p in enumerate(pred_order):
        best = threshold
        m = -1
        for g in gt_order:
            if taken[g]:
                continue
            if m >= 0 and not gt_ignore[m] and gt_ignore[g]:
                break
            sim = image.similarity[g, p]
            if sim < best or (m >= 0 and sim == best):
                continue
            best = sim
            m = g
        if m >= 0:
            taken[m] = True
            matched[i] = True
            ignored[i] = gt_ignore[m]
        else:
            area = image.pred_areas[p]
            ignored[i] = area < low or area >= high
    return matched, ignored, int((~gt_ignore).sum())


def _sweep(
    images: Sequence[ImageMatches], threshold: float, area_range: Tuple[float, float]
) -> Tuple[Optional[float], Optional[float]]:
    scores: List[np.ndarray] = []
    tps: List[np.ndarray] = []
    keep: List[np.ndarray] = []
    n_pos = 0
    for image in images:
        matched, ignored, n = match_image(image, threshold, area_range)
        scores.append(np.sort(-image.scores, kind="mergesort"))
        tps.append(matched)
        keep.append(~ignored)
        n_pos += n
    if n_pos == 0:
        return None, None
    if not scores:
        return 0.0, 0.0
    neg_scores = np.concatenate(scores)
    tp = np.concatenate(tps)
    valid = np.concatenate(keep)
    order = np.argsort(neg_scores, kind="mergesort")
    tp = tp[order][valid[order]]
    if tp.size == 0:
        return 0.0, 0.0
    tp_sum = np.cumsum(tp).astype(np.float64)
    fp_sum = np.cumsum(~tp).astype(np.float64)
    recall = tp_sum / n_pos
    precision = tp_sum / (tp_sum + fp_sum)
    # precision envelope, then sample at the fixed recall points
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def compute_ap_ar(
    images: Sequence[ImageMatches],
    thresholds: Sequence[float] = tuple(THRESHOLDS),
    area_range: Tuple[float, float] = (0.0, np.inf),
) -> Tuple[Optional[float], Optional[float]]:
    """
    AP and AR averaged over thresholds; (None, None) when no gt falls in ``area_range``.
    """
    results = [_sweep(images, t, area_range) for t in thresholds]
    if results and results[0][0] is None:
        return None, None
    ap = float(np.mean([r[0] for r in results]))
    ar = float(np.mean([r[1] for r in results]))
    return ap, ar


@dataclass
class APSummary:
    ap: float
    ap50: float
    ap75: float
    ap_m: Optional[float]
    ap_l: Optional[float]
    ar: float
    ar50: float
    ar75: float
    ar_m: Optional[float]
    ar_l: Optional[float]


def summarize(
    images: Sequence[ImageMatches],
    medium_area: float = MEDIUM_AREA,
    large_area: float = LARGE_AREA,
) -> Optional[APSummary]:
    """AP/AR at all thresholds, at 0.50 and 0.75, and per size stratum."""
    ap, ar = compute_ap_ar(images)
    if ap is None or ar is None:
        return None
    ap50, ar50 = compute_ap_ar(images, (0.5,))
    ap75, ar75 = compute_ap_ar(images, (0.75,))
    ap_m, ar_m = compute_ap_ar(images, area_range=(medium_area, large_area))
    ap_l, ar_l = compute_ap_ar(images, area_range=(large_area, np.inf))
    return APSummary(ap, ap50 or 0.0, ap75 or 0.0, ap_m, ap_l, ar, ar50 or 0.0, ar75 or 0.0, ar_m, ar_l)


@dataclass(frozen=True)
class SubstitutionFlags:
    body: bool = False
    surface: bool = False
    u: bool = False
    v: bool = False

    @classmethod
    def all(cls) -> "SubstitutionFlags":
        return cls(True, True, True, True)

    @property
    def any(self) -> bool:
        return self.body or self.surface or self.u or self.v

    def label(self) -> str:
        names = [n for n in ("body", "surface", "u", "v") if getattr(self, n)]
        return "+".join(names) if names else "none"


SUBSTITUTION_ROWS = (
    SubstitutionFlags(),
    SubstitutionFlags(body=True),
    SubstitutionFlags(body=True, u=True, v=True),
    SubstitutionFlags(body=True, surface=True),
    SubstitutionFlags(body=True, surface=True, v=True),
    SubstitutionFlags(body=True, surface=True, u=True),
    SubstitutionFlags.all(),
)


def prediction_lookup(
    pred: InstancePrediction,
    scene: SceneAnnotation,
    flags: SubstitutionFlags = SubstitutionFlags(),
) -> Lookup:
    """
    Lookup for ``pred``, with the channels named by ``flags`` replaced by the
    dense truth of the prediction's own instance.
    """
    if not flags.any:
        return pred.lookup

    def lookup(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        hr, wr = pred.surface.shape
        r = np.clip(np.floor(y).astype(np.int64), 0, scene.height - 1)
        c = np.clip(np.floor(x).astype(np.int64), 0, scene.width - 1)
        box = pred.box
        inside = (x >= box.x0) & (x < box.x1) & (y >= box.y0) & (y < box.y1)
        cr = np.clip(np.floor((y - box.y0) / box.height * hr), 0, hr - 1).astype(np.int64)
        cc = np.clip(np.floor((x - box.x0) / box.width * wr), 0, wr - 1).astype(np.int64)
        if flags.body:
            in_body = scene.instance_map[r, c] == pred.instance_id + 1
        else:
            in_body = inside & (pred.body_prob[cr, cc] >= 0.5)
        surface = scene.surface_map[r, c] if flags.surface else pred.surface[cr, cc]
        u = scene.u_map[r, c] if flags.u else pred.u[cr, cc]
        v = scene.v_map[r, c] if flags.v else pred.v[cr, cc]
        return np.where(in_body, surface, 0), u, v

    return lookup


def densepose_matches(
    scene: SceneAnnotation,
    preds: Sequence[InstancePrediction],
    kappa: float = KAPPA,
    flags: SubstitutionFlags = SubstitutionFlags(),
) -> ImageMatches:
    """
    GPS similarities of one image. A gt without annotated points is left
    out together with the prediction made for it.
    """
    gts = [inst for inst in scene.instances if len(inst.points)]
    kept_ids = {inst.box.instance_id for inst in gts}
    preds = [p for p in preds if p.instance_id in kept_ids]
    lookups = [prediction_lookup(p, scene, flags) for p in preds]
    sim = np.zeros((len(gts), len(preds)))
    for g, inst in enumerate(gts):
        for p, lookup in enumerate(lookups):
            sim[g, p] = gps(inst.points, lookup, kappa) or 0.0
    return ImageMatches(
        sim,
        np.array([p.score for p in preds], dtype=np.float64),
        np.array([inst.box.area for inst in gts], dtype=np.float64),
        np.array([p.box.area for p in preds], dtype=np.float64),
    )


def keypoint_matches(
    scene: SceneAnnotation, preds: Sequence[InstancePrediction], sigmas: np.ndarray
) -> ImageMatches:
    """OKS similarities of one image; gts without visible joints are left out with their predictions."""
    gts = [inst for inst in scene.instances if (inst.keypoints[:, 2] > 0).any()]
    kept_ids = {inst.box.instance_id for inst in gts}
    preds = [p for p in preds if p.instance_id in kept_ids]
    sim = np.zeros((len(gts), len(preds)))
    for g, inst in enumerate(gts):
        for p, pred in enumerate(preds):
            sim[g, p] = oks(inst.keypoints, pred.keypoints, inst.box.area, sigmas) or 0.0
    return ImageMatches(
        sim,
        np.array([p.score for p in preds], dtype=np.float64),
        np.array([inst.box.area for inst in gts], dtype=np.float64),
        np.array([p.box.area for p in preds], dtype=np.float64),
    )


@dataclass
class CategoryRow:
    part: str
    points: int
    ar: Optional[float]
    u_mse: Optional[float]
    v_mse: Optional[float]
    uv_gd: Optional[float]


@dataclass
class CategoryAccumulator:
    """Running per-standard-part sums over dense truth pixels."""

    points: np.ndarray = field(default_factory=lambda: np.zeros(len(body.STANDARD_PARTS)))
    correct_part: np.ndarray = field(default_factory=lambda: np.zeros(len(body.STANDARD_PARTS)))
    exact: np.ndarray = field(default_factory=lambda: np.zeros(len(body.STANDARD_PARTS)))
    u_se: np.ndarray = field(default_factory=lambda: np.zeros(len(body.STANDARD_PARTS)))
    v_se: np.ndarray = field(default_factory=lambda: np.zeros(len(body.STANDARD_PARTS)))
    gd: np.ndarray = field(default_factory=lambda: np.zeros(len(body.STANDARD_PARTS)))

    def add(
        self,
        gt_surface: np.ndarray,
        gt_u: np.ndarray,
        gt_v: np.ndarray,
        surface: np.ndarray,
        u: np.ndarray,
        v: np.ndarray,
    ) -> None:
        std = body.surface_standard_table()
        gt_part = std[gt_surface]
        pred_part = std[surface]
        exact = surface == gt_surface
        gd = body.geodesic_distance(surface, u, v, gt_surface, gt_u, gt_v)
        n = len(body.STANDARD_PARTS)
        self.points += np.bincount(gt_part, minlength=n)
        self.correct_part += np.bincount(gt_part, weights=(pred_part == gt_part), minlength=n)
        self.exact += np.bincount(gt_part, weights=exact, minlength=n)
        self.u_se += np.bincount(gt_part, weights=np.where(exact, (u - gt_u) ** 2, 0.0), minlength=n)
        self.v_se += np.bincount(gt_part, weights=np.where(exact, (v - gt_v) ** 2, 0.0), minlength=n)
        self.gd += np.bincount(gt_part, weights=gd, minlength=n)

    def merge(self, other: "CategoryAccumulator") -> None:
        for name in ("points", "correct_part", "exact", "u_se", "v_se", "gd"):
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def rows(self) -> List[CategoryRow]:
        """One row per standard part plus an ``all`` row; absent parts report None."""
        out = []
        labels = list(body.STANDARD_PARTS) + ["all"]
        sums = [getattr(self, n) for n in ("points", "correct_part", "exact", "u_se", "v_se", "gd")]
        for i, label in enumerate(labels):
            if label == "all":
                points, correct, exact, u_se, v_se, gd = (float(s.sum()) for s in sums)
            else:
                points, correct, exact, u_se, v_se, gd = (float(s[i]) for s in sums)
            if points == 0:
                out.append(CategoryRow(label, 0, None, None, None, None))
                continue
            out.append(
                CategoryRow(
                    label,
                    int(points),
                    100.0 * correct / points,
                    u_se / exact if exact else None,
                    v_se / exact if exact else None,
                    gd / points,
                )
            )
        return out


def per_category_scene(
    scene: SceneAnnotation,
    preds: Sequence[InstancePrediction],
    flags: SubstitutionFlags = SubstitutionFlags(),
) -> CategoryAccumulator:
    """Accumulate every dense truth pixel of every predicted instance of ``scene``."""
    acc = CategoryAccumulator()
    for pred in preds:
        rows, cols = np.nonzero(scene.instance_map == pred.instance_id + 1)
        if rows.size == 0:
            continue
        surface, u, v = prediction_lookup(pred, scene, flags)(cols + 0.5, rows + 0.5)
        acc.add(
            scene.surface_map[rows, cols],
            scene.u_map[rows, cols],
            scene.v_map[rows, cols],
            np.asarray(surface, dtype=np.int64),
            np.asarray(u, dtype=np.float64),
            np.asarray(v, dtype=np.float64),
        )
    return acc


@dataclass
class EvalReport:
    densepose: Optional[APSummary]
    keypoints: Optional[APSummary]
    per_category: List[CategoryRow]
    flags: SubstitutionFlags = SubstitutionFlags()
    images: int = 0

    @property
    def ap(self) -> float:
        return self.densepose.ap if self.densepose else 0.0

    def to_dict(self) -> Dict:
        return {
            "flags": self.flags.label(),
            "images": self.images,
            "densepose": asdict(self.densepose) if self.densepose else None,
            "keypoints": asdict(self.keypoints) if self.keypoints else None,
            "per_category": [asdict(row) for row in self.per_category],
        }

    def write_json(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_csv(self, summary_path: Path, category_path: Path) -> None:
        summary_path.parent.mkdir(parents=True, exist_ok=True)
        with open(summary_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["task", *APSummary.__dataclass_fields__])
            for task, summary in (("densepose", self.densepose), ("keypoints", self.keypoints)):
                values = asdict(summary).values() if summary else [None] * len(APSummary.__dataclass_fields__)
                writer.writerow([task, *(_cell(v) for v in values)])
        with open(category_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["part", "points", "ar", "u_mse", "v_mse", "uv_gd"])
            for row in self.per_category:
                writer.writerow(
                    [row.part, row.points, *(_cell(v) for v in (row.ar, row.u_mse, row.v_mse, row.uv_gd))]
                )


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def evaluate_predictions(
    scenes: Sequence[SceneAnnotation],
    predictions: Sequence[Sequence[InstancePrediction]],
    kappa: float = KAPPA,
    medium_area: float = MEDIUM_AREA,
    large_area: float = LARGE_AREA,
    flags: SubstitutionFlags = SubstitutionFlags(),
    sigmas: Optional[np.ndarray] = None,
) -> EvalReport:
    """Full report over a dataset; ``predictions[i]`` belongs to ``scenes[i]``."""
    if len(scenes) != len(predictions):
        raise MetricError(f"{len(scenes)} scenes but {len(predictions)} prediction lists")
    sigmas = load_sigmas() if sigmas is None else sigmas
    dense = []
    kpts = []
    acc = CategoryAccumulator()
    for scene, preds in zip(scenes, predictions):
        dense.append(densepose_matches(scene, preds, kappa, flags))
        kpts.append(keypoint_matches(scene, preds, sigmas))
        acc.merge(per_category_scene(scene, preds, flags))
    return EvalReport(
        densepose=summarize(dense, medium_area, large_area),
        keypoints=summarize(kpts, medium_area, large_area),
        per_category=acc.rows(),
        flags=flags,
        images=len(scenes),
    )


def gt_predictions(scene: SceneAnnotation, size: int = 16) -> List[InstancePrediction]:
    """Placeholder predictions on the gt boxes, for pure substitution checks."""
    preds = []
    for inst in scene.instances:
        box: RegionBox = inst.box
        preds.append(
            InstancePrediction(
                box,
                box.instance_id,
                1.0,
                np.zeros((size, size)),
                np.ones((size, size), dtype=np.int64),
                np.zeros((size, size)),
                np.zeros((size, size)),
                np.zeros((body.NUM_KEYPOINTS, 3)),
            )
        )
    return preds
