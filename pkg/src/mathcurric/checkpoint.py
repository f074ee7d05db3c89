"""Checkpoint files: a JSON manifest plus a flat little-endian float64 payload.

``save_checkpoint("run/model", ...)`` writes ``run/model.json`` and ``run/model.bin``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

FORMAT = "mathcurric-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def save_checkpoint(path, tensors: dict, config: dict, meta: dict | None = None) -> Path:
    manifest_path, payload_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, t in tensors.items():
        arr = t.detach().cpu().to(torch.float64).numpy().astype("<f8", copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(np.ascontiguousarray(arr).tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    payload_path.write_bytes(payload)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "float64",
        "endianness": "little",
        "payload": payload_path.name,
        "checksum": {"sha256": hashlib.sha256(payload).hexdigest()},
        "config": config,
        "meta": meta or {},
        "tensors": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Return ``(config, tensors, meta)`` after verifying the payload checksum."""
    manifest_path, _ = _paths(path)
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{manifest_path}: not a {FORMAT} manifest")
    if manifest.get("dtype") != "float64" or manifest.get("endianness") != "little":
        raise CheckpointError(f"{manifest_path}: unsupported payload encoding")
    payload = (manifest_path.parent / manifest["payload"]).read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["checksum"]["sha256"]:
        raise CheckpointError(f"{manifest_path}: payload checksum mismatch")
    tensors = {}
    for e in manifest["tensors"]:
        arr = np.frombuffer(payload, dtype="<f8", count=e["count"], offset=e["offset"])
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    return manifest["config"], tensors, manifest["meta"]


def load_into(module: torch.nn.Module, tensors: dict, prefix: str = "") -> None:
    """Copy ``tensors`` into ``module``'s parameters, requiring an exact name/shape match."""
    params = dict(module.named_parameters())
    names = {n[len(prefix):] for n in tensors if n.startswith(prefix)}
    missing = set(params) - names
    extra = names - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
    with torch.no_grad():
        for n, p in params.items():
            src = tensors[prefix + n]
            if tuple(src.shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {n}: checkpoint {tuple(src.shape)} vs model {tuple(p.shape)}")
            p.copy_(src.to(p.dtype))
