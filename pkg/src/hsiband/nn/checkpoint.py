"""Parameter checkpoints: magic, JSON header, flat little-endian float64 payload.

Layout::

    b"HSBCKPT1" | uint32 LE header length | UTF-8 JSON header | payload

The header lists tensors in payload order with name, shape and element
offset, plus an optional free-form ``model`` description.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"HSBCKPT1"


def checkpoint_bytes(params: dict[str, np.ndarray], model: dict[str, Any] | None = None) -> bytes:
    tensors = []
    offset = 0
    chunks = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    header = json.dumps({"model": model or {}, "tensors": tensors, "count": offset}, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], model: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, model))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    payload = np.frombuffer(raw[12 + hlen :], dtype="<f8")
    if payload.size != header["count"]:
        raise ValueError(f"{path}: payload holds {payload.size} values, header declares {header['count']}")
    params = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        params[t["name"]] = payload[t["offset"] : t["offset"] + n].reshape(t["shape"]).astype(np.float64)
    return params, header["model"]
