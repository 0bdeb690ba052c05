"""Parameter checkpoints: flat little-endian f32 arrays + a JSON manifest.

The manifest lists parameter names and shapes in storage order; the binary
file is the concatenation of the flattened arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InputError

MANIFEST_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    manifest = {"version": MANIFEST_VERSION, "params": []}
    blobs = []
    for name, arr in arrays.items():
        manifest["params"].append({"name": name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    path.with_suffix(".bin").write_bytes(b"".join(blobs))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise InputError(f"unsupported checkpoint version in {path}")
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    out = {}
    offset = 0
    for entry in manifest["params"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        out[entry["name"]] = (
            raw[offset : offset + size].astype(np.float32).reshape(entry["shape"])
        )
        offset += size
    if offset != raw.size:
        raise InputError(f"checkpoint payload size mismatch in {path}")
    return out
