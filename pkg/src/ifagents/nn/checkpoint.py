"""Checkpoint file format.

A text header followed by raw little-endian float64 data::

    IFCKPT 1
    meta <key> <json value>
    tensor <name> <dim> <dim> ...
    end
    <bytes of each tensor in header order>
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = "IFCKPT"
VERSION = 1


def fingerprint(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        h.update(f"{name}:{arr.shape};".encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    lines = [f"{MAGIC} {VERSION}"]
    for key, value in (meta or {}).items():
        if " " in key:
            raise ValueError("meta keys may not contain spaces")
        lines.append(f"meta {key} {json.dumps(value, sort_keys=True)}")
    for name, arr in params.items():
        lines.append(" ".join(["tensor", name] + [str(n) for n in np.shape(arr)]))
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple:
    blob = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = blob.find(marker)
    if not blob.startswith(MAGIC.encode()) or cut < 0:
        raise CheckpointError(f"{path}: not a checkpoint file")
    header = blob[:cut].decode("utf-8").split("\n")
    magic, version = header[0].split()
    if int(version) != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta, shapes = {}, []
    for line in header[1:]:
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = json.loads(value)
        elif kind == "tensor":
            parts = rest.split()
            shapes.append((parts[0], tuple(int(n) for n in parts[1:])))
        else:
            raise CheckpointError(f"{path}: bad header line {line!r}")
    offset = cut + len(marker)
    params = {}
    for name, shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        chunk = blob[offset: offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: truncated tensor {name}")
        params[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return params, meta
