"""Checkpoint files: a one-line JSON header plus a flat float64 payload.

Layout: magic line, JSON header (architecture, seed, training config,
array shapes, payload sha256), then the parameter arrays concatenated as
little-endian doubles in the documented order (layer-major, weights then
bias, row-major).  Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import ArchitectureMismatch, CorruptCheckpoint

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"NEURITEFLOW-CKPT-1\n"
PARAM_ORDER = "layer-major, weights-then-bias, row-major"


def save_checkpoint(
    path,
    arrays: list[np.ndarray],
    architecture: dict,
    seed: int,
    config: dict | None = None,
) -> None:
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays
    )
    header = {
        "architecture": architecture,
        "seed": int(seed),
        "config": config or {},
        "shapes": [list(a.shape) for a in arrays],
        "dtype": "<f8",
        "order": PARAM_ORDER,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + payload
    Path(path).write_bytes(blob)


def load_checkpoint(
    path, expected_architecture: dict | None = None
) -> tuple[list[np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CorruptCheckpoint(f"{path}: bad magic")
    body = raw[len(MAGIC):]
    nl = body.index(b"\n")
    try:
        header = json.loads(body[:nl])
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    payload = body[nl + 1:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CorruptCheckpoint(f"{path}: payload hash mismatch")
    if expected_architecture is not None and header["architecture"] != expected_architecture:
        raise ArchitectureMismatch(
            f"{path}: checkpoint architecture {header['architecture']} "
            f"!= expected {expected_architecture}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = []
    off = 0
    for shape in header["shapes"]:
        size = int(np.prod(shape)) if shape else 1
        arrays.append(flat[off:off + size].reshape(shape).astype(np.float64))
        off += size
    if off != flat.size:
        raise CorruptCheckpoint(f"{path}: payload size mismatch")
    return arrays, header
