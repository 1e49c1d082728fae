"""Flat little-endian float32 payloads with JSON sidecars.

This is the on-disk convention shared by mel caches, embedding matrices,
and exported alignment matrices: the payload file holds the raw row-major
float32 values, and ``<payload>.json`` describes the shape plus any extra
metadata. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import FormatError

PAYLOAD_DTYPE = np.dtype("<f4")


def sidecar_path(payload_path) -> Path:
    return Path(str(payload_path) + ".json")


def save_array(payload_path, array, extra=None):
    """Write ``array`` as flat float32 plus a sidecar with its shape.

    ``extra`` entries are merged into the sidecar; they must be JSON
    serializable and must not collide with the reserved keys.
    """
    array = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE)
    meta = {"shape": list(array.shape), "dtype": "float32"}
    if extra:
        for key in extra:
            if key in meta:
                raise ValueError(f"reserved sidecar key: {key}")
        meta.update(extra)
    payload_path = Path(payload_path)
    payload_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(array.tobytes())
    sidecar_path(payload_path).write_text(json.dumps(meta), encoding="utf-8")


def load_array(payload_path):
    """Load a payload written by :func:`save_array`.

    Returns ``(array, meta)`` where ``meta`` is the parsed sidecar.
    Raises :class:`FormatError` when the sidecar is missing or the payload
    length disagrees with the declared shape.
    """
    payload_path = Path(payload_path)
    side = sidecar_path(payload_path)
    if not side.exists():
        raise FormatError(f"missing sidecar for {payload_path}")
    if not payload_path.exists():
        raise FormatError(f"missing payload {payload_path}")
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparsable sidecar {side}: {exc}") from exc
    if "shape" not in meta:
        raise FormatError(f"sidecar {side} lacks a shape field")
    shape = tuple(int(n) for n in meta["shape"])
    raw = payload_path.read_bytes()
    expected = int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{payload_path}: payload holds {len(raw)} bytes, "
            f"sidecar shape {list(shape)} needs {expected}"
        )
    array = np.frombuffer(raw, dtype=PAYLOAD_DTYPE).reshape(shape).copy()
    return array, meta


def atomic_write_bytes(path, data: bytes):
    """Write-temp-then-rename so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
