"""
Ablation presets: each trains and evaluates a grid of configurations over
several seeds and tabulates the metrics with a per-configuration median.
"""

import csv
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config, override
from .errors import ConfigError
from .evaluate import evaluate
from .metrics import EvalReport
from .synth import SceneAnnotation
from .train import load_scenes, train
from .utils import console

Preset = List[Tuple[str, Dict[str, Any]]]

_NO_MID = {"model.icr": "off", "model.strengthen": False}

PRESETS: Dict[str, Preset] = {
    "components": [
        ("baseline", {**_NO_MID, "ktm.mode": "off"}),
        ("baseline+mid", {"ktm.mode": "off"}),
        ("baseline+ktm", {**_NO_MID, "ktm.mode": "v2-full"}),
        ("baseline+mid+ktm", {"ktm.mode": "v2-full"}),
    ],
    "dilations": [
        ("d111", {"model.dilations": (1, 1, 1)}),
        ("d222", {"model.dilations": (2, 2, 2)}),
        ("d333", {"model.dilations": (3, 3, 3)}),
        ("d123", {"model.dilations": (1, 2, 3)}),
    ],
    "graphs": [
        ("crkg_s+kt", {"ktm.mode": "v2-full"}),
        ("crkg_a+kt", {"ktm.mode": "crkg_a"}),
        ("crkg_s_only", {"ktm.mode": "crkg_s_only"}),
        ("no_ktm", {"ktm.mode": "off"}),
    ],
    "imbalance": [
        ("ktm", {"ktm.mode": "v2-full", "imbalance.strategy": "ktm-only"}),
        ("none", {"ktm.mode": "off", "imbalance.strategy": "none"}),
        ("reweight", {"ktm.mode": "off", "imbalance.strategy": "reweight"}),
        ("resample", {"ktm.mode": "off", "imbalance.strategy": "resample"}),
        ("ohem", {"ktm.mode": "off", "imbalance.strategy": "ohem"}),
    ],
    "mid": [
        (
            f"icr_{icr}+is_{'on' if strengthen else 'off'}",
            {"model.icr": icr, "model.strengthen": strengthen, "ktm.mode": "off"},
        )
        for icr in ("off", "v1", "v2")
        for strengthen in (False, True)
    ],
    "parsers": [
        ("loc", {"ktm.mode": "v2-full", "ktm.sources": ("loc",)}),
        ("part", {"ktm.mode": "v2-full", "ktm.sources": ("part",)}),
        ("kpt", {"ktm.mode": "v2-full", "ktm.sources": ("kpt",)}),
        ("none", {"ktm.mode": "off"}),
    ],
}

SUMMARY_METRICS = ("ap", "ap50", "ap75", "ap_m", "ap_l", "ar")


def report_metrics(report: EvalReport, per_category: bool) -> Dict[str, Optional[float]]:
    """Flatten a report into named metric values."""
    dp = report.densepose
    values: Dict[str, Optional[float]] = {
        name: (getattr(dp, name) if dp else None) for name in SUMMARY_METRICS
    }
    if per_category:
        for row in report.per_category:
            values[f"ar_{row.part}"] = row.ar
    return values


def preset_configs(name: str, base: Config) -> List[Tuple[str, Config]]:
    if name not in PRESETS:
        raise ConfigError(f"unknown ablation preset {name!r}; choose from {', '.join(PRESETS)}")
    return [(label, override(base, **values)) for label, values in PRESETS[name]]


def median(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.median(present)) if present else None


def run_ablation(
    name: str,
    base: Config,
    out_dir: Path,
    seeds: int = 3,
    train_scenes: Optional[List[SceneAnnotation]] = None,
    eval_scenes: Optional[List[SceneAnnotation]] = None,
) -> Path:
    """
    Train and evaluate every configuration of preset ``name`` for ``seeds`` seeds.

    Returns:
        Path of the comparison CSV with columns config, metric, seed_*, median
    """
    configs = preset_configs(name, base)
    train_scenes = load_scenes(base, "train") if train_scenes is None else train_scenes
    eval_scenes = load_scenes(base, "eval") if eval_scenes is None else eval_scenes
    per_category = name == "imbalance"

    table: Dict[Tuple[str, str], List[Optional[float]]] = {}
    for label, cfg in configs:
        for s in range(seeds):
            run_dir = out_dir / name / label / f"seed_{s}"
            run_cfg = override(cfg, **{"seed": base.seed + s, "output_dir": str(run_dir)})
            console.print(f"[cyan]{name}: {label}, seed {s}")
            result = train(run_cfg, train_scenes, run_dir, show_progress=False)
            report = evaluate(result.model, eval_scenes, run_cfg)
            report.write_json(run_dir / "report.json")
            for metric, value in report_metrics(report, per_category).items():
                table.setdefault((label, metric), []).append(value)

    path = out_dir / f"{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["config", "metric", *(f"seed_{s}" for s in range(seeds)), "median"])
        for (label, metric), values in table.items():
            cells = ["" if v is None else repr(v) for v in values]
            mid = median(values)
            writer.writerow([label, metric, *cells, "" if mid is None else repr(mid)])
    console.print(f"[green]Ablation {name} written to {path}")
    return path
