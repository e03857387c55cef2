"""Attention maps over image patches, overlays, and embedding exports for cluster plots."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

from .data import Dataset, Example, collate, load_image, select_image
from .model import CLMLF
from .training import predict


@dataclass
class AttentionMap:
    weights: np.ndarray  # [heads, n_t + n_i, n_t + n_i], last fusion layer
    mask: np.ndarray  # [n_t + n_i] key mask
    n_t: int
    n_i: int
    head: Union[int, str] = 0

    @property
    def grid(self) -> int:
        return int(round(np.sqrt(self.n_i)))

    def head_weights(self) -> np.ndarray:
        if self.head == "mean":
            return self.weights.mean(axis=0)
        return self.weights[self.head]

    def text_to_image(self) -> np.ndarray:
        """[n_t, n_i] block: attention of each text position onto each image token."""
        return self.head_weights()[: self.n_t, self.n_t:]

    def patch_grid(self, token: int) -> np.ndarray:
        if not 0 <= token < self.n_t:
            raise IndexError(f"text token index {token} outside [0, {self.n_t})")
        return self.text_to_image()[token].reshape(self.grid, self.grid)


@torch.no_grad()
def extract_attention(model: CLMLF, example: Example, head: Union[int, str] = 0) -> AttentionMap:
    if model.image_encoder is None:
        raise ValueError("attention over image patches needs a multimodal model")
    enc = model.enc_cfg
    heads = model.mlf_cfg.heads
    if head != "mean" and not 0 <= int(head) < heads:
        raise IndexError(f"head {head} outside [0, {heads})")
    model.eval()
    dtype = next(model.parameters()).dtype
    batch = collate([example], model.vocab, enc.max_len, (enc.image_size,) * 2, np.random.default_rng(0)).to(dtype)
    out = model(batch).mlf
    return AttentionMap(
        weights=out.attention[0].double().numpy(),
        mask=out.fused_mask[0].numpy().astype(bool),
        n_t=out.n_t,
        n_i=out.n_i,
        head=head,
    )


def upsample_nearest(weights: np.ndarray, height: int, width: int) -> np.ndarray:
    p, q = weights.shape
    rows = np.arange(height) * p // height
    cols = np.arange(width) * q // width
    return weights[rows[:, None], cols[None, :]]


def _as_uint8_image(image) -> np.ndarray:
    if isinstance(image, (str, Path)):
        with Image.open(image) as pil:
            return np.asarray(pil.convert("RGB")).copy()
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] in (1, 3) and arr.shape[-1] not in (1, 3):
        arr = arr.transpose(1, 2, 0)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def render_overlay(patch_weights, image, alpha: float = 0.5, cmap: str = "jet"):
    """Blend a colour-mapped heat layer over ``image``.

    Returns ``(blended uint8 [H, W, 3], heat [H, W] in [0, 1])``.
    """
    w = np.asarray(patch_weights, dtype=np.float64)
    if w.ndim != 2 or (w < 0).any():
        raise ValueError("patch weights must be a non-negative 2-D grid")
    img = _as_uint8_image(image)
    lo, hi = w.min(), w.max()
    norm = (w - lo) / (hi - lo) if hi > lo else np.zeros_like(w)
    heat = upsample_nearest(norm, img.shape[0], img.shape[1])
    rgb = colormaps[cmap](heat)[..., :3] * 255.0
    blended = (1.0 - alpha) * img.astype(np.float64) + alpha * rgb
    return np.clip(np.round(blended), 0, 255).astype(np.uint8), heat


def export_overlay(patch_weights, image, path, alpha: float = 0.5) -> Path:
    blended, _ = render_overlay(patch_weights, image, alpha)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(blended).save(path, format="PNG")
    return path


def example_image(example: Example, image_size: int) -> np.ndarray:
    """The example's (first-selected) image at model resolution, uint8 [H, W, 3]."""
    arr = load_image(example, select_image(example, np.random.default_rng(0)), (image_size, image_size))
    return _as_uint8_image(arr)


def export_embeddings(model: CLMLF, dataset: Dataset, path, batch_size: int = 256) -> Path:
    """CSV with header ``id,label,r0..r{d-1}``, one row per example in dataset order."""
    if len(dataset) == 0:
        raise ValueError("cannot export embeddings of an empty dataset")
    _, reps = predict(model, dataset, batch_size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"r{j}" for j in range(reps.shape[1])])
        for ex, row in zip(dataset, reps):
            writer.writerow([ex.id, ex.label] + [repr(float(v)) for v in row])
    return path


def read_embeddings(path):
    """Returns ``(ids, labels, matrix)`` from an embeddings CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    ids = [r[0] for r in body]
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    mat = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    return ids, labels, mat


def pca_2d(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("PCA needs a 2-D array with at least 3 rows")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("input has rank 0 after centering; nothing to project")
    comps = vt[:2]
    # fix each component's sign so its largest-magnitude loading is positive
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * signs[:, None]
    coords = centered @ comps.T
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - coords.shape[1]))])
    return coords


def project_2d(embeddings, method: Union[str, Callable] = "pca") -> np.ndarray:
    """Project rows to 2-D; ``method`` is ``"pca"`` or any callable returning [N, 2] (e.g. a t-SNE)."""
    if callable(method):
        coords = np.asarray(method(np.asarray(embeddings)))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("external projector must return an [N, 2] array")
        return coords
    if method != "pca":
        raise ValueError(f"unknown projection method {method!r}")
    return pca_2d(embeddings)


def write_coordinates(ids, labels, coords, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "x", "y"])
        for i, y, (a, b) in zip(ids, labels, coords):
            writer.writerow([i, int(y), repr(float(a)), repr(float(b))])
    return path
