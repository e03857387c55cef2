"""Augmented views for data-based contrastive learning.

Text goes through a back-translation interface (identity, an offline synonym
stub, or an HTTP machine-translation round trip); images go through a
RandAugment-style policy that samples ops uniformly without any search.
"""

from __future__ import annotations

import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .data import Batch, Example, Vocab, collate

log = logging.getLogger(__name__)

TEXT_KINDS = ("identity", "stub", "mt_client")

IMAGE_OPS = (
    "identity",
    "brightness",
    "contrast",
    "sharpness",
    "rotate",
    "translate_x",
    "translate_y",
    "shear_x",
    "shear_y",
    "posterize",
    "solarize",
)


def load_synonyms(path=None) -> dict[str, list[str]]:
    """Read a two-column (word, synonym) table; ``#`` starts a comment."""
    if path is None:
        text = resources.files("clmlf.resources").joinpath("synonyms.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    table: dict[str, list[str]] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"synonym table line needs two columns: {line!r}")
        table.setdefault(parts[0], []).append(parts[1])
    return table


@dataclass
class TextAugmenter:
    kind: str = "stub"
    synonyms: Optional[dict[str, list[str]]] = None
    substitute_prob: float = 0.5
    dropout: float = 0.1
    endpoint: Optional[str] = None
    source_lang: str = "en"
    pivot_lang: str = "de"
    timeout: float = 5.0
    # set when an MT round trip fails and the input is returned unchanged
    failed: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.kind not in TEXT_KINDS:
            raise ValueError(f"unknown text augmenter kind {self.kind!r}")
        if self.kind == "stub" and self.synonyms is None:
            self.synonyms = load_synonyms()
        if self.kind == "mt_client" and not self.endpoint:
            raise ValueError("mt_client augmenter needs an endpoint")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.substitute_prob <= 1.0:
            raise ValueError("dropout must be in [0, 1) and substitute_prob in [0, 1]")


def _stub_paraphrase(text: str, aug: TextAugmenter, rng: np.random.Generator) -> str:
    words = text.split()
    out = []
    for w in words:
        choices = aug.synonyms.get(w.lower())
        # draw both numbers for every word so the stream does not depend on table hits
        sub, pick = rng.random(), rng.random()
        if choices and sub < aug.substitute_prob:
            w = choices[int(pick * len(choices))]
        out.append(w)
    keep = rng.random(len(out)) >= aug.dropout
    if not keep.any():
        keep[int(rng.integers(len(out)))] = True
    return " ".join(w for w, k in zip(out, keep) if k)


def _translate(text: str, source: str, target: str, aug: TextAugmenter) -> str:
    payload = json.dumps({"q": text, "source": source, "target": target, "format": "text"}).encode()
    req = urllib.request.Request(aug.endpoint, data=payload, headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=aug.timeout) as resp:
        body = json.loads(resp.read().decode("utf-8"))
    out = body.get("translatedText") if isinstance(body, dict) else None
    if not isinstance(out, str) or not out.strip():
        raise ValueError("translation response lacks a non-empty 'translatedText'")
    return out


def back_translate(text: str, aug: TextAugmenter, rng: np.random.Generator) -> str:
    """Paraphrase ``text``; never raises on MT transport failure."""
    if aug.kind == "identity":
        return text
    if aug.kind == "stub":
        return _stub_paraphrase(text, aug, rng)
    try:
        pivot = _translate(text, aug.source_lang, aug.pivot_lang, aug)
        return _translate(pivot, aug.pivot_lang, aug.source_lang, aug)
    except (urllib.error.URLError, OSError, ValueError, TimeoutError) as err:
        aug.failed = True
        log.warning("back-translation failed, keeping original text: %s", err)
        return text


@dataclass(frozen=True)
class ImageAugmentPolicy:
    n_ops: int = 2
    magnitude: int = 9
    op_set: tuple[str, ...] = IMAGE_OPS

    def __post_init__(self):
        if self.n_ops < 0:
            raise ValueError("n_ops must be >= 0")
        if not 0 <= self.magnitude <= 10:
            raise ValueError("magnitude must be an integer in [0, 10]")
        object.__setattr__(self, "op_set", tuple(self.op_set))
        unknown = set(self.op_set) - set(IMAGE_OPS)
        if unknown:
            raise ValueError(f"unknown image op(s): {sorted(unknown)}")
        if self.n_ops > 0 and not self.op_set:
            raise ValueError("op_set must be non-empty when n_ops > 0")


def _luminance(img):
    if img.shape[0] == 3:
        return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    return img[0]


_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


def _affine(img, matrix, offset_fn):
    """Apply an output->input pixel map per channel, replicating edges."""
    h, w = img.shape[1:]
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = offset_fn(center)
    return np.stack(
        [ndimage.affine_transform(ch, matrix, offset=offset, order=1, mode="nearest") for ch in img]
    )


def apply_op(img: np.ndarray, op: str, magnitude: int, sign: int) -> np.ndarray:
    """One augmentation on a [C, H, W] image in [0, 1]; ``sign`` is +1 or -1."""
    level = magnitude / 10.0
    if op == "identity":
        return img
    if op == "brightness":
        return img * (1.0 + 0.9 * level * sign)
    if op == "contrast":
        mean = _luminance(img).mean()
        return mean + (1.0 + 0.9 * level * sign) * (img - mean)
    if op == "sharpness":
        blurred = np.stack([ndimage.convolve(ch, _SMOOTH, mode="nearest") for ch in img])
        return blurred + (1.0 + 0.9 * level * sign) * (img - blurred)
    if op == "rotate":
        theta = np.deg2rad(30.0 * level * sign)
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        return _affine(img, rot, lambda c: c - rot @ c)
    if op in ("translate_x", "translate_y"):
        axis = 1 if op == "translate_x" else 0
        shift = [0.0, 0.0]
        shift[axis] = 0.3 * img.shape[1 + axis] * level * sign
        # output pixel p samples input p - shift
        return _affine(img, np.eye(2), lambda c: -np.array(shift))
    if op in ("shear_x", "shear_y"):
        m = np.eye(2)
        if op == "shear_x":
            m[1, 0] = 0.3 * level * sign
        else:
            m[0, 1] = 0.3 * level * sign
        return _affine(img, m, lambda c: c - m @ c)
    if op == "posterize":
        bits = 8 - int(4 * level)
        q = np.floor(np.clip(img, 0, 1) * 255.0).astype(np.uint8)
        q &= np.uint8((0xFF << (8 - bits)) & 0xFF)
        return q.astype(img.dtype) / 255.0
    if op == "solarize":
        threshold = 1.0 - level
        return np.where(img >= threshold, 1.0 - img, img)
    raise ValueError(f"unknown image op {op!r}")


def sample_ops(policy: ImageAugmentPolicy, rng: np.random.Generator) -> list[tuple[str, int]]:
    if policy.n_ops == 0:
        return []
    idx = rng.integers(len(policy.op_set), size=policy.n_ops)
    signs = rng.choice(np.array([-1, 1]), size=policy.n_ops)
    return [(policy.op_set[i], int(s)) for i, s in zip(idx, signs)]


def rand_augment(image: np.ndarray, policy: ImageAugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    ops = sample_ops(policy, rng)
    if not ops:
        return image
    out = image.astype(np.float64)
    for op, sign in ops:
        out = apply_op(out, op, policy.magnitude, sign)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment_batch(
    examples: Sequence[Example],
    text_aug: TextAugmenter,
    policy: ImageAugmentPolicy,
    vocab: Vocab,
    max_len: int,
    image_size: tuple[int, int],
    rng: np.random.Generator,
    select_rng: Optional[np.random.Generator] = None,
) -> Batch:
    """Collate the augmented view of ``examples`` (same order, same labels).

    ``select_rng`` should replay the generator state used for the clean batch
    so multi-image examples augment the same picture.
    """
    texts = [back_translate(ex.text, text_aug, rng) for ex in examples]
    return collate(
        examples,
        vocab,
        max_len,
        image_size,
        select_rng,
        texts=texts,
        image_transform=lambda img: rand_augment(img, policy, rng),
    )


@dataclass
class AugmentConfig:
    text_kind: str = "stub"
    substitute_prob: float = 0.5
    dropout: float = 0.1
    synonyms_path: Optional[str] = None
    endpoint: Optional[str] = None
    source_lang: str = "en"
    pivot_lang: str = "de"
    timeout: float = 5.0
    n_ops: int = 2
    magnitude: int = 9
    op_set: list = field(default_factory=lambda: list(IMAGE_OPS))

    def text_augmenter(self) -> TextAugmenter:
        synonyms = load_synonyms(self.synonyms_path) if self.synonyms_path else None
        return TextAugmenter(
            kind=self.text_kind,
            synonyms=synonyms,
            substitute_prob=self.substitute_prob,
            dropout=self.dropout,
            endpoint=self.endpoint,
            source_lang=self.source_lang,
            pivot_lang=self.pivot_lang,
            timeout=self.timeout,
        )

    def policy(self) -> ImageAugmentPolicy:
        return ImageAugmentPolicy(self.n_ops, self.magnitude, tuple(self.op_set))
