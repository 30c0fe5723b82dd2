"""Checkpoint format: versioned JSON manifest + raw little-endian float64
buffer. `base` names the pair: <base>.json and <base>.bin."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import ParameterStore

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(store: ParameterStore, base: str | Path, extra: dict | None = None) -> Path:
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for p in store:
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        entries.append(
            {
                "name": p.name,
                "shape": list(p.data.shape),
                "offset": offset,
                "count": int(arr.size),
                "trainable": bool(p.trainable),
            }
        )
        chunks.append(arr.tobytes())
        offset += int(arr.size)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "<f8",
        "buffer": base.name + ".bin",
        "params": entries,
    }
    if extra:
        manifest["extra"] = extra
    (base.parent / (base.name + ".bin")).write_bytes(b"".join(chunks))
    manifest_path = base.parent / (base.name + ".json")
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def load_checkpoint(base: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ({name: array}, manifest)."""
    base = Path(base)
    manifest_path = base.parent / (base.name + ".json")
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    raw = (base.parent / manifest["buffer"]).read_bytes()
    flat = np.frombuffer(raw, dtype="<f8")
    values: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        lo = entry["offset"]
        hi = lo + entry["count"]
        if hi > flat.size:
            raise CheckpointError(f"buffer too short for parameter {entry['name']!r}")
        values[entry["name"]] = flat[lo:hi].reshape(entry["shape"]).astype(np.float64)
    return values, manifest


def apply_checkpoint(store: ParameterStore, base: str | Path, strict: bool = True) -> dict:
    values, manifest = load_checkpoint(base)
    store.load_values(values, strict=strict)
    return manifest
