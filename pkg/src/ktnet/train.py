#!/usr/bin/env python3
"""
Training loop.

Runs single-threaded and is fully determined by the configuration seed:
the same configuration gives the same checkpoint bit for bit.
"""

import csv
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .backbone import RegionBox
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, config_from_dict, dumps, save_config
from .dataset import generate_dataset, load_dataset
from .errors import CheckpointError
from .fcn import check_single_instance, full_image_box
from .head import HeadOutput, InstanceTargets, compute_losses, forward_head, rasterize_instance
from .imbalance import ClassStats, ResampleSampler, ohem_triplet, reweight
from .losses import pixel_ce
from .model import KTN, build_model
from .optim import SGD, StepSchedule
from .synth import SceneAnnotation, SynthConfig, foreground_cells
from .tensor import Tensor
from .utils import console, iteration_progress

TRAIN_SEED_BASE = 1_000_000
EVAL_SEED_BASE = 2_000_000
NEGATIVE_IOU = 0.3
NEGATIVE_TRIES = 20
LOG_COLUMNS = (
    "iter",
    "total",
    "body",
    "part",
    "keypoint",
    "surface",
    "uv",
    "seg",
    "instance",
    "triplet",
    "lr",
)
CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train_log.csv"


def load_scenes(cfg: Config, split: str) -> List[SceneAnnotation]:
    """Scenes of ``split`` ("train" or "eval"): read from the configured file or generated."""
    path = cfg.data.train if split == "train" else cfg.data.eval
    if path:
        return load_dataset(Path(path))
    count = cfg.data.train_scenes if split == "train" else cfg.data.eval_scenes
    base = TRAIN_SEED_BASE if split == "train" else EVAL_SEED_BASE
    return generate_dataset(base, count, SynthConfig.from_data(cfg.data))


@dataclass
class Strategy:
    """The imbalance technique in effect for one run."""

    name: str
    class_weights: Optional[np.ndarray] = None
    sampler: Optional[ResampleSampler] = None
    minor: Optional[np.ndarray] = None

    @classmethod
    def build(cls, cfg: Config, scenes: List[SceneAnnotation], rng: np.random.Generator) -> "Strategy":
        name = cfg.imbalance.strategy
        if name in ("none", "ktm-only"):
            return cls(name)
        stats = ClassStats.from_scenes(scenes)
        if name == "reweight":
            return cls(name, class_weights=reweight(stats))
        if name == "resample":
            return cls(name, sampler=ResampleSampler(stats, rng))
        return cls(name, minor=stats.minor_classes(cfg.imbalance.minor_fraction))


def negative_box(rng: np.random.Generator, scene: SceneAnnotation) -> Optional[RegionBox]:
    """A random box overlapping every instance by less than ``NEGATIVE_IOU``."""
    gts = [inst.box for inst in scene.instances]
    for _ in range(NEGATIVE_TRIES):
        w, h = rng.uniform(0.15, 0.5, size=2) * (scene.width, scene.height)
        x0 = rng.uniform(0, scene.width - w)
        y0 = rng.uniform(0, scene.height - h)
        box = RegionBox(float(x0), float(y0), float(x0 + w), float(y0 + h), -1)
        if all(box.iou(g) < NEGATIVE_IOU for g in gts):
            return box
    return None


def _point_features(out: HeadOutput, targets: InstanceTargets) -> Tensor:
    gathered = T.take(out.features, (slice(None), targets.rows, targets.cols))
    return T.transpose(gathered, (1, 0))


def region_loss(
    out: HeadOutput, targets: InstanceTargets, cfg: Config, strategy: Strategy
) -> Tuple[Tensor, Dict[str, float]]:
    if strategy.sampler is not None and targets.n_points:
        targets = targets.with_points(strategy.sampler.select(targets.surface))
    total, breakdown = compute_losses(out, targets, cfg.loss, strategy.class_weights)
    breakdown["triplet"] = 0.0
    if strategy.minor is not None and targets.n_points:
        triplet = ohem_triplet(
            _point_features(out, targets), targets.surface, strategy.minor, cfg.loss.margin
        )
        breakdown["triplet"] = float(triplet.item())
        total = T.add(total, T.scale(triplet, cfg.loss.triplet))
    return total, breakdown


def scene_loss(
    model: KTN,
    scene: SceneAnnotation,
    cfg: Config,
    strategy: Strategy,
    rng: np.random.Generator,
) -> Tuple[Tensor, Dict[str, float]]:
    """Loss of one scene: decoder segmentation plus every region."""
    mid_out = model.encode(scene.image)
    parts: List[Tensor] = []
    sums: Dict[str, float] = {name: 0.0 for name in LOG_COLUMNS[2:-1]}
    if mid_out.seg_logits is not None:
        seg = pixel_ce(mid_out.seg_logits, foreground_cells(scene.instance_map))
        sums["seg"] = float(seg.item())
        parts.append(T.scale(seg, cfg.loss.seg))

    w_s = model.surface_weights()
    if model.pipeline == "fcn":
        check_single_instance(scene)
        out = forward_head(mid_out.suppressed, model.head, model.parsers, w_s)
        box = full_image_box(scene)
        targets = rasterize_instance(scene, 0, box, out.extent)
        total, breakdown = region_loss(out, targets, cfg, strategy)
        parts.append(total)
        for name, value in breakdown.items():
            sums[name] += value
    else:
        size = (model.region_size, model.region_size)
        for i, inst in enumerate(scene.instances):
            out = model.region(mid_out, inst.box, w_s)
            targets = rasterize_instance(scene, i, inst.box, size)
            total, breakdown = region_loss(out, targets, cfg, strategy)
            parts.append(total)
            for name, value in breakdown.items():
                sums[name] += value
        box_neg = negative_box(rng, scene)
        if box_neg is not None:
            out = model.region(mid_out, box_neg, w_s)
            total, breakdown = compute_losses(out, None, cfg.loss, instance_target=1)
            parts.append(total)
            sums["instance"] += breakdown["instance"]
    return T.add_n(parts), sums


@dataclass
class TrainResult:
    model: KTN
    log: List[Dict[str, float]]
    checkpoint: Path


def train(
    cfg: Config,
    scenes: Optional[List[SceneAnnotation]] = None,
    out_dir: Optional[Path] = None,
    show_progress: bool = True,
) -> TrainResult:
    """
    Train a model from scratch and write its checkpoint, log and resolved config.

    Args:
        cfg: Resolved configuration
        scenes: Training scenes; loaded or generated from ``cfg.data`` when None
        out_dir: Output directory, ``cfg.output_dir`` by default
        show_progress: Show a progress bar on the console
    """
    out_dir = Path(cfg.output_dir) if out_dir is None else out_dir
    scenes = load_scenes(cfg, "train") if scenes is None else scenes
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, rng)
    strategy = Strategy.build(cfg, scenes, rng)
    optimizer = SGD(model.parameters(), cfg.optim.lr, cfg.optim.momentum)
    schedule = StepSchedule(
        cfg.optim.lr, cfg.optim.iterations, cfg.optim.decay_points, cfg.optim.decay_factor
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.toml")
    log: List[Dict[str, float]] = []
    order = rng.permutation(len(scenes))
    cursor = 0

    progress = iteration_progress()
    task = progress.add_task("Training", total=cfg.optim.iterations)
    with open(out_dir / LOG_NAME, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        if show_progress:
            progress.start()
        try:
            for it in range(cfg.optim.iterations):
                losses = []
                sums = {name: 0.0 for name in LOG_COLUMNS[2:-1]}
                for _ in range(cfg.optim.batch_size):
                    if cursor == len(order):
                        order = rng.permutation(len(scenes))
                        cursor = 0
                    loss, terms = scene_loss(model, scenes[order[cursor]], cfg, strategy, rng)
                    cursor += 1
                    losses.append(loss)
                    for name, value in terms.items():
                        sums[name] += value / cfg.optim.batch_size
                batch_loss = T.scale(T.add_n(losses), 1.0 / len(losses))
                T.backward(batch_loss)
                lr = schedule(it)
                optimizer.step(lr)
                row = {"iter": float(it), "total": float(batch_loss.item()), **sums, "lr": lr}
                writer.writerow(row)
                log.append(row)
                progress.update(task, advance=1)
        finally:
            if show_progress:
                progress.stop()

    checkpoint = out_dir / CHECKPOINT_NAME
    save_checkpoint(
        checkpoint,
        model.state_dict(),
        {"config": dumps(cfg), "iterations": str(cfg.optim.iterations)},
    )
    console.print(f"[green]Trained {cfg.optim.iterations} iterations, checkpoint at {checkpoint}")
    return TrainResult(model, log, checkpoint)


def load_model(path: Path, cfg: Optional[Config] = None) -> Tuple[KTN, Config]:
    """
    Rebuild a trained model from a checkpoint.

    The configuration stored in the checkpoint is used unless ``cfg`` is given.

    Raises:
        CheckpointError: on unreadable files or incompatible tensors
    """
    tensors, meta = load_checkpoint(path)
    if cfg is None:
        if "config" not in meta:
            raise CheckpointError(f"{path}: no configuration stored in the checkpoint")
        try:
            cfg = config_from_dict(tomllib.loads(meta["config"]))
        except tomllib.TOMLDecodeError as e:
            raise CheckpointError(f"{path}: stored configuration is not valid TOML ({e})") from None
    model = build_model(cfg, np.random.default_rng(cfg.seed))
    model.load_state_dict(tensors)
    return model, cfg
