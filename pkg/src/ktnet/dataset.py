"""
Scene dataset files.

A dataset is a JSON-lines file. The first line is a header
``{"format": "ktnet-dataset", "version": 1, "scenes": N}``; each following
line is one scene. Arrays are stored as ``{"dtype", "shape", "data"}`` with
``data`` the base64 text of the zstd-compressed raw bytes.
"""

import base64
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List

import numpy as np
import zstd

from .backbone import RegionBox
from .errors import DatasetError
from .synth import InstanceAnnotation, SceneAnnotation, SynthConfig, generate_scene

FORMAT = "ktnet-dataset"
VERSION = 1
ZSTD_LEVEL = 9

_ALLOWED_DTYPES = ("<f8", "<i8", "|b1")


def encode_array(array: np.ndarray) -> Dict[str, Any]:
    array = np.ascontiguousarray(array)
    if np.issubdtype(array.dtype, np.floating):
        array = array.astype("<f8")
    elif array.dtype == bool:
        array = array.astype("|b1")
    else:
        array = array.astype("<i8")
    return {
        "dtype": array.dtype.str,
        "shape": list(array.shape),
        "data": base64.b64encode(zstd.compress(array.tobytes(), ZSTD_LEVEL)).decode("ascii"),
    }


def decode_array(record: Dict[str, Any], where: str) -> np.ndarray:
    try:
        dtype = record["dtype"]
        shape = tuple(int(n) for n in record["shape"])
        raw = zstd.decompress(base64.b64decode(record["data"], validate=True))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{where}: malformed array ({e})") from None
    except zstd.Error as e:
        raise DatasetError(f"{where}: corrupt compressed data ({e})") from None
    if dtype not in _ALLOWED_DTYPES:
        raise DatasetError(f"{where}: unsupported dtype {dtype!r}")
    expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise DatasetError(f"{where}: expected {expected} bytes for shape {list(shape)}, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _scene_record(scene: SceneAnnotation) -> Dict[str, Any]:
    return {
        "seed": scene.seed,
        "image": encode_array(scene.image),
        "instance_map": encode_array(scene.instance_map),
        "surface_map": encode_array(scene.surface_map),
        "u_map": encode_array(scene.u_map),
        "v_map": encode_array(scene.v_map),
        "instances": [
            {
                "box": inst.box.as_list(),
                "instance_id": inst.box.instance_id,
                "body_mask": encode_array(inst.body_mask),
                "part_mask": encode_array(inst.part_mask),
                "keypoints": encode_array(inst.keypoints),
                "points": encode_array(inst.points),
            }
            for inst in scene.instances
        ],
    }


def _field(record: Dict[str, Any], key: str, where: str) -> Any:
    if key not in record:
        raise DatasetError(f"{where}: missing field {key!r}")
    return record[key]


def _scene_from_record(record: Dict[str, Any], where: str) -> SceneAnnotation:
    if not isinstance(record, dict):
        raise DatasetError(f"{where}: expected an object")
    instances: List[InstanceAnnotation] = []
    for i, inst in enumerate(_field(record, "instances", where)):
        at = f"{where}, instance {i}"
        box = _field(inst, "box", at)
        if not isinstance(box, list) or len(box) != 4:
            raise DatasetError(f"{at}: box must be [x0, y0, x1, y1]")
        instances.append(
            InstanceAnnotation(
                box=RegionBox(*(float(b) for b in box), int(_field(inst, "instance_id", at))),
                body_mask=decode_array(_field(inst, "body_mask", at), f"{at}.body_mask"),
                part_mask=decode_array(_field(inst, "part_mask", at), f"{at}.part_mask"),
                keypoints=decode_array(_field(inst, "keypoints", at), f"{at}.keypoints"),
                points=decode_array(_field(inst, "points", at), f"{at}.points"),
            )
        )
    arrays = {
        key: decode_array(_field(record, key, where), f"{where}.{key}")
        for key in ("image", "instance_map", "surface_map", "u_map", "v_map")
    }
    return SceneAnnotation(instances=instances, seed=int(_field(record, "seed", where)), **arrays)


def save_dataset(path: Path, scenes: Iterable[SceneAnnotation]) -> int:
    """Write scenes to ``path``; returns the number written."""
    scenes = list(scenes)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": FORMAT, "version": VERSION, "scenes": len(scenes)}) + "\n")
        for scene in scenes:
            f.write(json.dumps(_scene_record(scene), separators=(",", ":")) + "\n")
    return len(scenes)


def load_dataset(path: Path) -> List[SceneAnnotation]:
    """
    Read a dataset file.

    Raises:
        DatasetError: naming the line and field of the first problem, on a
            wrong format or version, or when fewer scenes than announced are
            present
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DatasetError(f"{path}: cannot read ({e.strerror})") from None
    if not lines:
        raise DatasetError(f"{path}: empty file")

    header = _json_line(path, 1, lines[0])
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise DatasetError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise DatasetError(f"{path}: unsupported version {header.get('version')!r}, expected {VERSION}")
    expected = header.get("scenes")
    if not isinstance(expected, int) or expected < 0:
        raise DatasetError(f"{path}: header has no valid scene count")

    body_lines = [(n, line) for n, line in enumerate(lines[1:], start=2) if line.strip()]
    if len(body_lines) < expected:
        raise DatasetError(f"{path}: truncated, header announces {expected} scenes, found {len(body_lines)}")
    if len(body_lines) > expected:
        raise DatasetError(f"{path}: {len(body_lines) - expected} scenes beyond the announced {expected}")

    scenes = []
    for index, (n, line) in enumerate(body_lines):
        record = _json_line(path, n, line)
        scenes.append(_scene_from_record(record, f"{path}:{n} (scene {index})"))
    return scenes


def _json_line(path: Path, number: int, line: str) -> Any:
    try:
        return json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}:{number}: invalid JSON ({e.msg})") from None


def generate_dataset(first_seed: int, count: int, cfg: SynthConfig) -> List[SceneAnnotation]:
    """Scenes for seeds ``first_seed .. first_seed + count - 1``."""
    return [generate_scene(first_seed + i, cfg) for i in range(count)]
