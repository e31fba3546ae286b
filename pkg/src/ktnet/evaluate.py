"""
Dataset-level evaluation and prediction export.

Images are predicted in parallel with read-only weights; results are reduced
in image order, so reports do not depend on the thread count.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import Config
from .head import InstancePrediction, prediction_record
from .metrics import (
    SUBSTITUTION_ROWS,
    EvalReport,
    SubstitutionFlags,
    evaluate_predictions,
)
from .model import KTN
from .synth import SceneAnnotation
from .utils import console

PredictionSet = List[List[InstancePrediction]]


def predict_scenes(model: KTN, scenes: Sequence[SceneAnnotation], threads: int = 1) -> PredictionSet:
    """Predictions for every scene, in scene order."""
    if threads <= 1:
        return [model.predict(scene) for scene in scenes]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(model.predict, scenes))


def evaluate(
    model: KTN,
    scenes: Sequence[SceneAnnotation],
    cfg: Config,
    flags: SubstitutionFlags = SubstitutionFlags(),
    predictions: Optional[PredictionSet] = None,
) -> EvalReport:
    if predictions is None:
        predictions = predict_scenes(model, scenes, cfg.eval.threads)
    report = evaluate_predictions(
        scenes,
        predictions,
        kappa=cfg.eval.kappa,
        medium_area=cfg.eval.medium_area,
        large_area=cfg.eval.large_area,
        flags=flags,
    )
    if report.densepose is not None:
        if report.densepose.ap_m is None:
            console.print("[yellow]Warning: no medium-size instances; AP_M not reported")
        if report.densepose.ap_l is None:
            console.print("[yellow]Warning: no large instances; AP_L not reported")
    return report


def substitution_table(
    model: KTN, scenes: Sequence[SceneAnnotation], cfg: Config
) -> List[Dict[str, object]]:
    """
    AP/AR with progressively more prediction channels replaced by truth,
    one row per substitution setting.
    """
    predictions = predict_scenes(model, scenes, cfg.eval.threads)
    rows: List[Dict[str, object]] = []
    for flags in SUBSTITUTION_ROWS:
        report = evaluate(model, scenes, cfg, flags, predictions)
        dp = report.densepose
        rows.append(
            {
                "substituted": flags.label(),
                "ap": dp.ap if dp else None,
                "ap50": dp.ap50 if dp else None,
                "ap75": dp.ap75 if dp else None,
                "ap_m": dp.ap_m if dp else None,
                "ap_l": dp.ap_l if dp else None,
                "ar": dp.ar if dp else None,
            }
        )
    return rows


def write_table(rows: List[Dict[str, object]], csv_path: Path, json_path: Path) -> None:
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    json_path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")


def write_predictions(path: Path, predictions: PredictionSet) -> int:
    """Write the prediction interchange file; returns the number of instances."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for image_index, preds in enumerate(predictions):
            for pred in preds:
                f.write(json.dumps(prediction_record(pred, image_index)) + "\n")
                count += 1
    return count
