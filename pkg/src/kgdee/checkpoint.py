"""Self-describing parameter container.

Layout::

    KGDEE-CHECKPOINT 1\\n
    meta <key> <json value>\\n        (zero or more)
    param <name> <dim1>x<dim2>...\\n  (one per array, in storage order)
    END\\n
    <little-endian float64 arrays, concatenated in header order>

Scalars are stored with the shape token ``scalar``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = "KGDEE-CHECKPOINT"
VERSION = 1


def _shape_token(shape) -> str:
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(token: str) -> tuple:
    if token == "scalar":
        return ()
    return tuple(int(s) for s in token.split("x"))


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    lines = [f"{MAGIC} {VERSION}"]
    for key, value in (meta or {}).items():
        if " " in key or "\n" in key:
            raise ValueError(f"invalid meta key {key!r}")
        lines.append(f"meta {key} {json.dumps(value, sort_keys=True, ensure_ascii=False)}")
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"invalid parameter name {name!r}")
        lines.append(f"param {name} {_shape_token(np.shape(arr))}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in arrays.values())
    return header + body


def loads(blob: bytes):
    """Inverse of :func:`dumps`; returns ``(meta, arrays)``."""
    end = blob.find(b"\nEND\n")
    if not blob.startswith(MAGIC.encode()) or end < 0:
        raise DataError("not a checkpoint container")
    header = blob[:end].decode("utf-8").split("\n")
    magic, version = header[0].split(" ")
    if int(version) != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    meta, shapes = {}, []
    for line in header[1:]:
        kind, name, rest = line.split(" ", 2)
        if kind == "meta":
            meta[name] = json.loads(rest)
        elif kind == "param":
            shapes.append((name, _parse_shape(rest)))
        else:
            raise DataError(f"bad checkpoint header line {line!r}")
    offset = end + len(b"\nEND\n")
    arrays = {}
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob):
            raise DataError(f"checkpoint truncated while reading {name}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64)
        arrays[name] = arr.reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise DataError("trailing bytes after checkpoint payload")
    return meta, arrays


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    Path(path).write_bytes(dumps(arrays, meta))


def load(path):
    return loads(Path(path).read_bytes())
