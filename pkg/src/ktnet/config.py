#!/usr/bin/env python3
"""
Experiment configuration.

Configuration files are TOML. Every key has a default; unknown keys, wrong
types and invalid choices raise ``ConfigError`` naming the dotted key.
"""

import dataclasses
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import tomli_w

from .errors import ConfigError

ICR_CHOICES = ("off", "v1", "v2")
PIPELINE_CHOICES = ("rcnn", "fcn")
KTM_CHOICES = ("off", "v1-kpt-only", "v2-full", "crkg_a", "crkg_s_only")
SOURCE_CHOICES = ("loc", "part", "kpt")
IMBALANCE_CHOICES = ("none", "reweight", "resample", "ohem", "ktm-only")


@dataclass(frozen=True)
class ModelConfig:
    backbone_channels: int = 16
    unified_channels: int = 32
    head_dim: int = 32
    head_convs: int = 8
    region_size: int = 16
    dilations: Tuple[int, ...] = (1, 2, 3)
    icr: str = "v2"
    strengthen: bool = True
    pipeline: str = "rcnn"
    bias: bool = True


@dataclass(frozen=True)
class KtmConfig:
    mode: str = "v2-full"
    sources: Tuple[str, ...] = ("loc", "part", "kpt")
    omega: float = 0.5
    tau: float = 0.5
    slope: float = 0.2
    embeddings: str = ""
    counts: str = ""
    mask: str = ""


@dataclass(frozen=True)
class LossConfig:
    body: float = 1.0
    part: float = 1.0
    keypoint: float = 1.0
    surface: float = 1.0
    uv: float = 10.0
    seg: float = 1.0
    instance: float = 1.0
    triplet: float = 1.0
    margin: float = 0.5


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.01
    momentum: float = 0.9
    iterations: int = 2000
    batch_size: int = 2
    decay_points: Tuple[float, ...] = (0.75, 0.92)
    decay_factor: float = 0.1


@dataclass(frozen=True)
class ImbalanceConfig:
    strategy: str = "none"
    minor_fraction: float = 0.5


@dataclass(frozen=True)
class DataConfig:
    train: str = ""
    eval: str = ""
    train_scenes: int = 200
    eval_scenes: int = 50
    image_size: int = 128
    n_instances: int = 2
    occlusion: float = 0.3
    scale_range: Tuple[float, ...] = (0.45, 0.9)
    distractors: int = 3
    point_mean: float = 100.0
    point_std: float = 25.0
    point_max: int = 196


@dataclass(frozen=True)
class EvalConfig:
    kappa: float = 0.255
    medium_area: float = 32.0**2
    large_area: float = 96.0**2
    threads: int = 1


@dataclass(frozen=True)
class Config:
    seed: int = 0
    output_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    ktm: KtmConfig = field(default_factory=KtmConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    imbalance: ImbalanceConfig = field(default_factory=ImbalanceConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        sample = default[0] if default else ""
        return tuple(_coerce(f"{key}[{i}]", v, sample) for i, v in enumerate(value))
    raise ConfigError(f"{key}: unsupported value {value!r}")


def _build(cls: Any, data: Dict[str, Any], prefix: str) -> Any:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    values: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in fields:
            raise ConfigError(f"unknown configuration key: {dotted}")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a table")
            values[key] = _build(type(default), value, f"{dotted}.")
        else:
            values[key] = _coerce(dotted, value, default)
    return dataclasses.replace(defaults, **values)


def _choice(key: str, value: str, choices: Tuple[str, ...]) -> None:
    if value not in choices:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(choices)}")


def validate(cfg: Config) -> Config:
    """Check choices and cross-field constraints; returns ``cfg``."""
    _choice("model.icr", cfg.model.icr, ICR_CHOICES)
    _choice("model.pipeline", cfg.model.pipeline, PIPELINE_CHOICES)
    _choice("ktm.mode", cfg.ktm.mode, KTM_CHOICES)
    _choice("imbalance.strategy", cfg.imbalance.strategy, IMBALANCE_CHOICES)
    for i, source in enumerate(cfg.ktm.sources):
        _choice(f"ktm.sources[{i}]", source, SOURCE_CHOICES)
    if not cfg.ktm.sources:
        raise ConfigError("ktm.sources: needs at least one parser")
    if not cfg.model.dilations or any(d < 1 for d in cfg.model.dilations):
        raise ConfigError("model.dilations: needs one or more rates >= 1")
    if cfg.data.image_size % 32:
        raise ConfigError(f"data.image_size: {cfg.data.image_size} is not divisible by 32")
    if len(cfg.data.scale_range) != 2 or not 0 < cfg.data.scale_range[0] <= cfg.data.scale_range[1]:
        raise ConfigError("data.scale_range: expected [low, high] with 0 < low <= high")
    if not 0 <= cfg.data.occlusion <= 1:
        raise ConfigError("data.occlusion: expected a value in [0, 1]")
    if cfg.data.n_instances < 1:
        raise ConfigError("data.n_instances: needs at least one instance")
    if cfg.optim.iterations < 1 or cfg.optim.batch_size < 1:
        raise ConfigError("optim.iterations and optim.batch_size must be positive")
    if cfg.eval.threads < 1:
        raise ConfigError("eval.threads: must be positive")
    if cfg.imbalance.strategy == "ktm-only" and cfg.ktm.mode == "off":
        raise ConfigError("imbalance.strategy: ktm-only requires ktm.mode other than off")
    if cfg.model.pipeline == "fcn" and cfg.data.n_instances != 1:
        raise ConfigError("model.pipeline: fcn needs data.n_instances = 1")
    return cfg


def config_from_dict(data: Dict[str, Any]) -> Config:
    return validate(_build(Config, data, ""))


def load_config(path: Optional[Path]) -> Config:
    """
    Read and validate a configuration file; ``None`` gives the defaults.

    Raises:
        ConfigError: on syntax errors, unknown keys, wrong types or choices
    """
    if path is None:
        return validate(Config())
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return config_from_dict(data)


def override(cfg: Config, **values: Any) -> Config:
    """
    Replace values by dotted key, e.g. ``override(cfg, **{"eval.threads": 4})``.
    """
    data = to_dict(cfg)
    for dotted, value in values.items():
        if value is None:
            continue
        node = data
        *path, last = dotted.split(".")
        for key in path:
            node = node.setdefault(key, {})
        node[last] = list(value) if isinstance(value, tuple) else value
    return config_from_dict(data)


def to_dict(cfg: Any) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def dumps(cfg: Config) -> str:
    return tomli_w.dumps(to_dict(cfg))


def save_config(cfg: Config, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        tomli_w.dump(to_dict(cfg), f)
