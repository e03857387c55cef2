"""Checkpoints: a JSON manifest next to a flat little-endian float32 parameter blob.

Layout of a checkpoint directory::

    manifest.json   format version, parameter manifest (name, shape, offset,
                    count), TrainConfig snapshot, vocabulary, RNG state
    params.bin      all parameters concatenated in manifest order as '<f4'
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import from_dict, to_dict
from .data import Vocab
from .model import CLMLF
from .training import TrainConfig, build_model

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"


class CheckpointError(ValueError):
    pass


def capture_rng_state(np_rng: Optional[np.random.Generator] = None) -> dict:
    state = {"torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii")}
    if np_rng is not None:
        state["numpy"] = np_rng.bit_generator.state
    return state


def restore_torch_rng(state: dict) -> None:
    raw = np.frombuffer(base64.b64decode(state["torch"]), dtype=np.uint8).copy()
    torch.set_rng_state(torch.from_numpy(raw))


def save_checkpoint(model: CLMLF, config: TrainConfig, path, rng_state: Optional[dict] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size * 4
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "blob_bytes": offset,
        "parameters": entries,
        "num_classes": model.num_classes,
        "vocab": model.vocab.to_list(),
        "config": to_dict(config),
        "rng_state": rng_state or capture_rng_state(),
    }
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path):
    """Returns ``(model, config)``; the model is in eval mode."""
    path = Path(path)
    if not (path / MANIFEST).exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path / MANIFEST}")
    manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    blob = (path / BLOB).read_bytes()
    entries = manifest["parameters"]
    expected = sum(e["count"] for e in entries) * 4
    if manifest.get("blob_bytes") != expected:
        raise CheckpointError(f"manifest declares {manifest.get('blob_bytes')} bytes but entries need {expected}")
    if len(blob) != expected:
        raise CheckpointError(f"parameter blob has {len(blob)} bytes, manifest expects {expected}")
    offset = 0
    for e in entries:
        if e["offset"] != offset or e["count"] != int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"manifest entry {e['name']!r} does not tile the blob")
        offset += e["count"] * 4

    config = from_dict(TrainConfig, manifest["config"])
    model = build_model(config, Vocab.from_list(manifest["vocab"]), manifest["num_classes"])
    state = {}
    for e in entries:
        arr = np.frombuffer(blob, dtype="<f4", count=e["count"], offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model, config
