"""Flat binary array cache with a JSON sidecar (shape, dtype tag, config hash)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.parent / (stem.name + ".bin"), stem.parent / (stem.name + ".json")


def save_array(stem, array: np.ndarray, config_hash: str, **extra) -> Path:
    blob, side = _paths(stem)
    blob.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(array)
    arr.tofile(blob)
    meta = {"shape": list(arr.shape), "dtype": arr.dtype.str, "config_hash": config_hash, **extra}
    side.write_text(json.dumps(meta, sort_keys=True))
    return blob


def load_array(stem, config_hash: str | None = None) -> np.ndarray | None:
    """Load a cached array; None when absent or written under another config."""
    blob, side = _paths(stem)
    if not side.exists() or not blob.exists():
        return None
    meta = json.loads(side.read_text())
    if config_hash is not None and meta.get("config_hash") != config_hash:
        return None
    return np.fromfile(blob, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"])
