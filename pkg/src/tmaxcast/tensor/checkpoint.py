"""Parameter checkpoints: ``manifest.json`` + flat little-endian float32 ``params.bin``."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "tmaxcast-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f4")


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], extra: dict | None = None) -> Path:
    """Write named arrays in the given order. ``extra`` is embedded verbatim in the manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    manifest = {"format": FORMAT, "version": VERSION, "dtype": "float32-le", "tensors": entries}
    if extra:
        manifest.update(extra)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (path / "params.bin").write_bytes(b"".join(chunks))
    return path


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_arrays`; returns ``(arrays, manifest)``."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} directory")
    flat = np.fromfile(path / "params.bin", dtype=_DTYPE)
    total = sum(e["count"] for e in manifest["tensors"])
    if flat.size != total:
        raise ValueError(f"{path}/params.bin holds {flat.size} values, manifest lists {total}")
    arrays = {}
    for e in manifest["tensors"]:
        chunk = flat[e["offset"]:e["offset"] + e["count"]]
        arrays[e["name"]] = chunk.reshape(e["shape"]).astype(np.float32)
    return arrays, manifest
