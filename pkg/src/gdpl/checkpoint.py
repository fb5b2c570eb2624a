"""Flat binary weight dumps with a JSON manifest.

``<name>.bin`` holds every tensor as little-endian float64, concatenated in
manifest order. ``<name>.manifest.json`` lists name, shape, byte offset and
the sha256 of each tensor's bytes. Loading verifies every hash, so a round
trip is bit-exact or fails loudly.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

_LE = np.dtype("<f8")


class CheckpointError(IOError):
    pass


def save_state(directory, name: str, state: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / f"{name}.bin", "wb") as fh:
        for key in sorted(state):
            raw = np.ascontiguousarray(state[key], dtype=_LE).tobytes()
            fh.write(raw)
            entries.append({"name": key, "shape": list(np.shape(state[key])), "offset": offset,
                            "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
            offset += len(raw)
    manifest = {"format": "gdpl-f64le-v1", "file": f"{name}.bin", "tensors": entries, "meta": meta or {}}
    path = directory / f"{name}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_state(directory, name: str) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    mpath = directory / f"{name}.manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    blob = (directory / manifest["file"]).read_bytes()
    state = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise CheckpointError(f"hash mismatch for tensor {e['name']} in {mpath}")
        state[e["name"]] = np.frombuffer(raw, dtype=_LE).astype(np.float64).reshape(e["shape"])
    return state, manifest.get("meta", {})
