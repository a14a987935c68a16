"""JSON checkpoint container for named float32 parameters.

Layout::

    {"format": "fgse-ckpt-v1",
     "hyper": {...},
     "params": {"name": {"shape": [..], "data": "<base64 little-endian f32>"}}}
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_TAG = "fgse-ckpt-v1"


class CheckpointError(ValueError):
    pass


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f4")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(entry: Mapping[str, Any]) -> np.ndarray:
    shape = tuple(int(s) for s in entry["shape"])
    raw = base64.b64decode(entry["data"])
    a = np.frombuffer(raw, dtype="<f4")
    if a.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"payload has {a.size} values, shape {shape} needs {int(np.prod(shape))}")
    return a.reshape(shape).astype(np.float32)


def save_checkpoint(path, params: Mapping[str, np.ndarray], hyper: Mapping[str, Any]) -> None:
    doc = {
        "format": FORMAT_TAG,
        "hyper": dict(hyper),
        "params": {name: encode_array(value) for name, value in params.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint (line {exc.lineno})") from exc
    if doc.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: format tag {doc.get('format')!r}, expected {FORMAT_TAG!r}")
    params = {name: decode_array(entry) for name, entry in doc["params"].items()}
    return params, doc.get("hyper", {})
