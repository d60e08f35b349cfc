"""Checkpoints: a JSON manifest (name -> shape, offset) plus one flat RTN1 blob."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import BackboneWeights, ModelConfig, init_backbone
from .numerics import rtn

FORMAT = "rsrwkv-checkpoint-1"


def blob_path(manifest: str | Path) -> Path:
    return Path(manifest).with_suffix(".rtn1")


def save_checkpoint(weights: BackboneWeights, path: str | Path) -> Path:
    """Write ``path`` (manifest) and a sibling ``.rtn1`` blob; returns the blob path."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, t in weights.named_parameters():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(t.data.reshape(-1))
        offset += t.size
    blob = blob_path(path)
    rtn.write(blob, np.concatenate(chunks).astype(weights.dtype))
    cfg = asdict(weights.cfg)
    cfg["stage_depths"] = list(cfg["stage_depths"])
    manifest = {
        "format": FORMAT,
        "dtype": "f32" if weights.dtype == np.float32 else "f64",
        "config": cfg,
        "blob": blob.name,
        "count": offset,
        "params": entries,
    }
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return blob


def load_checkpoint(path: str | Path) -> BackboneWeights:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise FormatError(f"{path} is not a {FORMAT} manifest")
    cfg = ModelConfig(**manifest["config"])
    flat = rtn.read(path.parent / manifest["blob"])
    if flat.ndim != 1 or flat.size != manifest["count"]:
        raise FormatError("blob size does not match manifest")
    weights = init_backbone(cfg, seed=0, dtype=manifest["dtype"])
    params = dict(weights.named_parameters())
    if [e["name"] for e in manifest["params"]] != list(params):
        raise FormatError("checkpoint parameter list does not match the configuration")
    for e in manifest["params"]:
        t = params[e["name"]]
        if list(t.shape) != e["shape"]:
            raise FormatError(f"{e['name']}: shape {e['shape']} != {list(t.shape)}")
        t.data[...] = flat[e["offset"]:e["offset"] + t.size].reshape(t.shape)
    return weights
