"""Checkpoints: one SST1 file per named tensor plus a JSON manifest."""
from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from ssdm.diffcore import sst
from ssdm.errors import ConfigError
from ssdm.segnet import ModelConfig, SegNet

FORMAT = "ssdm-checkpoint-1"
_STAGE = re.compile(r"(?:stage|smm|lat|log_tau)(\d+)")


def _stage_of(name: str) -> int | None:
    m = _STAGE.search(name)
    return int(m.group(1)) if m else None


def save_tensors(directory: str | os.PathLike, tensors: dict[str, np.ndarray], extra: dict | None = None) -> Path:
    d = Path(directory)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        fname = f"tensors/{name}.sst"
        sst.save(d / fname, arr)
        entries[name] = {"file": fname, "shape": list(arr.shape), "stage": _stage_of(name)}
    manifest = {"format": FORMAT, "tensors": entries}
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_tensors(directory: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ConfigError(f"{d} is not a {FORMAT} checkpoint")
    out = {}
    for name, e in manifest["tensors"].items():
        arr = sst.load(d / e["file"])
        if list(arr.shape) != e["shape"]:
            raise ConfigError(f"tensor {name!r} has shape {arr.shape}, manifest says {e['shape']}")
        out[name] = arr
    return manifest, out


def save_model(directory: str | os.PathLike, model: SegNet, extra: dict | None = None) -> Path:
    tensors = {k: p.data for k, p in model.parameters().items()}
    meta = {"model": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    return save_tensors(directory, tensors, meta)


def load_model(directory: str | os.PathLike, expect: ModelConfig | None = None) -> SegNet:
    manifest, tensors = load_tensors(directory)
    cfg = ModelConfig(**manifest["model"])
    if expect is not None and expect.to_dict() != cfg.to_dict():
        want, have = expect.to_dict(), cfg.to_dict()
        diff = {k: (have[k], want[k]) for k in want if want[k] != have.get(k)}
        raise ConfigError(f"checkpoint model config differs from the requested one (checkpoint, requested): {diff}")
    model = SegNet(cfg)
    params = model.parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise ConfigError(f"checkpoint tensors do not match the model: {missing[:5]}")
    for k, p in params.items():
        if p.shape != tensors[k].shape:
            raise ConfigError(f"shape mismatch for {k}: {p.shape} vs {tensors[k].shape}")
        p.data[...] = tensors[k]
    return model
