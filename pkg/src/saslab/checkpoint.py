"""Checkpoint serialization: one binary blob per step plus a JSON manifest.

Each tensor is written name-by-name as row-major little-endian floats; the
manifest records names, shapes, dtypes, byte offsets, the step number and
the RNG derivation state, so a load is exact to the byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

FORMAT_TAG = "saslab-checkpoint-v1"


@dataclass
class Checkpoint:
    step: int
    arrays: dict[str, np.ndarray]
    rng_state: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def checkpoint_paths(directory: Path | str, step: int) -> tuple[Path, Path]:
    base = Path(directory) / f"step_{step:08d}"
    return base.with_suffix(".bin"), base.with_suffix(".json")


def save_checkpoint(
    directory: Path | str,
    step: int,
    tensors: Mapping[str, Tensor | np.ndarray],
    rng_state: dict | None = None,
    stats: dict | None = None,
) -> Path:
    """Write the blob+manifest pair and return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path, json_path = checkpoint_paths(directory, step)
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, t in tensors.items():
            arr = _as_array(t)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            payload = np.ascontiguousarray(le).tobytes()
            fh.write(payload)
            entries.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": arr.dtype.name,
                    "offset": offset,
                    "nbytes": len(payload),
                }
            )
            offset += len(payload)
    manifest = {
        "format": FORMAT_TAG,
        "step": int(step),
        "byte_order": "little",
        "rng_state": rng_state or {},
        "stats": stats or {},
        "tensors": entries,
    }
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return json_path


def load_checkpoint(manifest_path: Path | str) -> Checkpoint:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_TAG:
        raise ValueError(f"not a checkpoint manifest: {manifest_path}")
    blob = manifest_path.with_suffix(".bin").read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer(
            blob, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1,
            offset=e["offset"],
        )
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return Checkpoint(
        step=manifest["step"],
        arrays=arrays,
        rng_state=manifest.get("rng_state", {}),
        stats=manifest.get("stats", {}),
    )


def checkpoint_digest(manifest_path: Path | str) -> str:
    """SHA-256 over blob bytes + manifest text; used to prove read-only access."""
    manifest_path = Path(manifest_path)
    h = hashlib.sha256()
    h.update(manifest_path.with_suffix(".bin").read_bytes())
    h.update(manifest_path.read_text().encode())
    return h.hexdigest()
