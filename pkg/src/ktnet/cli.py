#!/usr/bin/env python3
"""
Command-line interface for ktnet.
"""

import sys
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional

import rich_click as click
from click.exceptions import Abort, ClickException, Exit
from rich.table import Table

from .ablate import PRESETS, run_ablation
from .config import Config, load_config, override
from .dataset import generate_dataset, save_dataset
from .errors import InternalError, KtnError
from .evaluate import (
    evaluate,
    predict_scenes,
    substitution_table,
    write_predictions,
    write_table,
)
from .ktm import build_graph_ablation
from .metrics import EvalReport, SubstitutionFlags
from .synth import SynthConfig
from .train import EVAL_SEED_BASE, TRAIN_SEED_BASE, load_model, load_scenes, train
from .utils import console, report_error, with_phases


def handle_errors(func: Callable) -> Callable:
    """Turn library errors into a console message, one stderr record and exit status 1."""

    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except KtnError as e:
            report_error(e)
            sys.exit(1)
        except OSError as e:
            report_error(e, "E_IO")
            sys.exit(1)
        except (ClickException, Exit, Abort):
            raise
        except Exception as e:
            report_error(InternalError.wrap(e))
            sys.exit(1)

    return wrapper


def _config(ctx: click.Context) -> Config:
    return ctx.obj["config"]


def _print_report(report: EvalReport) -> None:
    dp = report.densepose
    if dp is None:
        console.print("[yellow]Warning: no instance with annotated points; densepose AP not reported")
    else:
        table = Table(title=f"Dense correspondence ({report.flags.label()})")
        for column in ("AP", "AP50", "AP75", "AP_M", "AP_L", "AR"):
            table.add_column(column, justify="right")
        table.add_row(
            *("-" if v is None else f"{v:.3f}" for v in (dp.ap, dp.ap50, dp.ap75, dp.ap_m, dp.ap_l, dp.ar))
        )
        console.print(table)
    parts = Table(title="Per category")
    for column in ("part", "points", "AR %", "U MSE", "V MSE", "UV GD"):
        parts.add_column(column, justify="right")
    for row in report.per_category:
        parts.add_row(
            row.part,
            str(row.points),
            *("-" if v is None else f"{v:.4f}" for v in (row.ar, row.u_mse, row.v_mse, row.uv_gd)),
        )
    console.print(parts)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Configuration TOML file")
@click.option("--seed", type=int, default=None, help="Override the configuration seed")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory")
@click.option("--threads", type=click.IntRange(1), default=None, help="Evaluation threads")
@click.pass_context
@handle_errors
def main(
    ctx: click.Context,
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    threads: Optional[int],
):
    """Train and evaluate knowledge-transfer dense correspondence networks."""
    cfg = load_config(Path(config_path) if config_path else None)
    cfg = override(cfg, **{"seed": seed, "output_dir": out, "eval.threads": threads})
    ctx.ensure_object(dict)
    ctx.obj["config"] = cfg


@main.command("train")
@click.pass_context
@handle_errors
def train_cmd(ctx: click.Context):
    """Train a model; writes the checkpoint, training log and resolved config."""
    cfg = _config(ctx)
    console.print(f"[cyan]Training into [bold]{cfg.output_dir}[/bold] with seed {cfg.seed}")
    train(cfg)


@main.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Dataset file (default: eval split)")
@click.option("--gt-body", is_flag=True, help="Replace predicted body masks by ground truth")
@click.option("--gt-surface", is_flag=True, help="Replace predicted surfaces by ground truth")
@click.option("--gt-u", is_flag=True, help="Replace predicted U by ground truth")
@click.option("--gt-v", is_flag=True, help="Replace predicted V by ground truth")
@click.option("--gt-all", is_flag=True, help="Replace every dense channel by ground truth")
@click.option("--bottleneck", is_flag=True, help="Write the full substitution table")
@click.pass_context
@handle_errors
def eval_cmd(
    ctx: click.Context,
    checkpoint: str,
    data: Optional[str],
    gt_body: bool,
    gt_surface: bool,
    gt_u: bool,
    gt_v: bool,
    gt_all: bool,
    bottleneck: bool,
):
    """Evaluate a checkpoint; writes JSON and CSV reports to the output directory."""
    cfg = _config(ctx)
    model, _ = load_model(Path(checkpoint))
    if data:
        cfg = override(cfg, **{"data.eval": data})
    scenes = load_scenes(cfg, "eval")
    out_dir = Path(cfg.output_dir)

    if bottleneck:
        rows = substitution_table(model, scenes, cfg)
        write_table(rows, out_dir / "substitution.csv", out_dir / "substitution.json")
        console.print(f"[green]Substitution table written to {out_dir / 'substitution.csv'}")
        return

    flags = SubstitutionFlags.all() if gt_all else SubstitutionFlags(gt_body, gt_surface, gt_u, gt_v)
    report = evaluate(model, scenes, cfg, flags)
    report.write_json(out_dir / "report.json")
    report.write_csv(out_dir / "report.csv", out_dir / "per_category.csv")
    _print_report(report)
    console.print(f"[green]Reports written to {out_dir}")


@main.command("predict")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Dataset file (default: eval split)")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Prediction file path")
@click.pass_context
@handle_errors
def predict_cmd(ctx: click.Context, checkpoint: str, data: Optional[str], output: Optional[str]):
    """Write dense predictions as JSON lines, one instance per line."""
    cfg = _config(ctx)
    model, _ = load_model(Path(checkpoint))
    if data:
        cfg = override(cfg, **{"data.eval": data})
    scenes = load_scenes(cfg, "eval")
    path = Path(output) if output else Path(cfg.output_dir) / "predictions.jsonl"
    count = write_predictions(path, predict_scenes(model, scenes, cfg.eval.threads))
    console.print(f"[green]{count} predictions written to {path}")


@main.command("ablate")
@click.argument("preset", type=click.Choice(tuple(PRESETS)))
@click.option("--seeds", type=click.IntRange(1), default=3, help="Seeds per configuration")
@click.pass_context
@handle_errors
def ablate_cmd(ctx: click.Context, preset: str, seeds: int):
    """Run an ablation preset and write its comparison CSV."""
    cfg = _config(ctx)
    run_ablation(preset, cfg, Path(cfg.output_dir), seeds)


@main.command("export-graph")
@click.option("--mode", type=click.Choice(("crkg_s", "crkg_a")), default="crkg_s", help="Graph variant")
@click.pass_context
@handle_errors
def export_graph_cmd(ctx: click.Context, mode: str):
    """Write the similarity, dependence and relation matrices as CSV."""
    cfg = _config(ctx)
    export(cfg, mode)


@with_phases("Building relation graph", "Writing matrices")
def export(cfg: Config, mode: str, next_phase: Any = None) -> None:
    k = cfg.ktm
    graph = build_graph_ablation(mode, k.embeddings, k.counts, k.mask, k.omega, k.tau)
    next_phase()
    for path in graph.save_csv(Path(cfg.output_dir)):
        console.print(f"[green]Wrote {path}")


@main.command("gen-data")
@click.option("--split", type=click.Choice(("train", "eval")), default="train", help="Dataset split")
@click.option("--count", type=click.IntRange(1), default=None, help="Number of scenes")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Dataset file path")
@click.pass_context
@handle_errors
def gen_data_cmd(ctx: click.Context, split: str, count: Optional[int], output: Optional[str]):
    """Generate a synthetic dataset file from the [data] section."""
    cfg = _config(ctx)
    if count is None:
        count = cfg.data.train_scenes if split == "train" else cfg.data.eval_scenes
    path = Path(output) if output else Path(cfg.output_dir) / f"{split}.jsonl"
    generate(cfg, split, count, path)


@with_phases("Generating scenes", "Writing")
def generate(cfg: Config, split: str, count: int, path: Path, next_phase: Any = None) -> None:
    base = TRAIN_SEED_BASE if split == "train" else EVAL_SEED_BASE
    scenes = generate_dataset(base, count, SynthConfig.from_data(cfg.data))
    next_phase(str(path))
    save_dataset(path, scenes)
    console.print(f"[green]{count} {split} scenes written to {path}")


if __name__ == "__main__":
    main()
