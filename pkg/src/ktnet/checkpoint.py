#!/usr/bin/env python3
"""
Named-tensor checkpoint files.

Layout::

    ktnet-checkpoint 1\\n
    <header byte length>\\n
    <TOML header: [meta] table and one [[tensor]] entry per tensor>
    <little-endian float64 payload>

Each ``[[tensor]]`` entry records ``name``, ``dtype``, ``shape`` and the byte
``offset`` of its data inside the payload.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import tomli_w

from .errors import CheckpointError

MAGIC = b"ktnet-checkpoint"
VERSION = 1
DTYPE = "<f8"


def save_checkpoint(
    path: Path, tensors: Dict[str, np.ndarray], meta: Optional[Dict[str, str]] = None
) -> None:
    """
    Write tensors to ``path``.

    Args:
        path: Destination file
        tensors: Mapping from name to array, written in mapping order
        meta: Optional string metadata stored in the header
    """
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        blob = np.ascontiguousarray(value, dtype=DTYPE).tobytes()
        entries.append(
            {"name": name, "dtype": DTYPE, "shape": list(np.shape(value)), "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = tomli_w.dumps({"meta": dict(meta or {}), "tensor": entries}).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + b" " + str(VERSION).encode() + b"\n")
        f.write(str(len(header)).encode() + b"\n")
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Returns:
        The tensors in file order and the header metadata
    """
    raw = Path(path).read_bytes()
    first, _, rest = raw.partition(b"\n")
    parts = first.split(b" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path} is not a ktnet checkpoint")
    if parts[1] != str(VERSION).encode():
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {parts[1].decode(errors='replace')}"
        )
    length_line, _, rest = rest.partition(b"\n")
    try:
        header_len = int(length_line)
        header = tomllib.loads(rest[:header_len].decode())
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}") from None
    payload = rest[header_len:]

    tensors: Dict[str, np.ndarray] = {}
    for entry in header.get("tensor", []):
        name = entry["name"]
        if entry.get("dtype") != DTYPE:
            raise CheckpointError(f"{path}: tensor {name} has dtype {entry.get('dtype')}")
        shape = tuple(entry["shape"])
        start = entry["offset"]
        end = start + 8 * int(np.prod(shape, dtype=np.int64))
        if end > len(payload):
            raise CheckpointError(f"{path}: payload truncated inside tensor {name}")
        tensors[name] = np.frombuffer(payload[start:end], dtype=DTYPE).reshape(shape).copy()
    return tensors, dict(header.get("meta", {}))
