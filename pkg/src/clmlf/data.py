"""Dataset schema, JSONL I/O, splitting, synthetic corpora and batch collation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
import torch
from PIL import Image

PAD, CLS, SEP, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")

IMAGE_MEAN = 0.5
IMAGE_STD = 0.5

SPLIT_TAGS = ("train", "val", "test", "all")

ImageLike = Union[str, np.ndarray]


class SchemaError(ValueError):
    """A dataset record does not match the expected schema."""


class ImageLoadError(IOError):
    pass


@dataclass(eq=False)
class Example:
    id: str
    text: str
    label: int
    image: Optional[ImageLike] = None
    images: Optional[list[ImageLike]] = None
    aspect: Optional[str] = None
    # generator bookkeeping (motif cell, evidence position); ignored by the model
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise SchemaError(f"example {self.id!r}: text must be a non-empty string")
        if (self.image is None) == (self.images is None):
            raise SchemaError(f"example {self.id!r}: exactly one of image/images is required")
        if self.images is not None and len(self.images) == 0:
            raise SchemaError(f"example {self.id!r}: images must be non-empty")
        if int(self.label) != self.label or self.label < 0:
            raise SchemaError(f"example {self.id!r}: label must be a non-negative integer")


@dataclass
class Dataset:
    examples: list[Example]
    num_classes: int
    split_tag: str = "all"

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {self.split_tag!r}")
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise SchemaError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
            if ex.label >= self.num_classes:
                raise SchemaError(
                    f"example {ex.id!r}: label {ex.label} >= num_classes {self.num_classes}"
                )

    def __len__(self):
        return len(self.examples)

    def __getitem__(self, idx):
        return self.examples[idx]

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def subset(self, indices: Iterable[int], split_tag: str) -> "Dataset":
        return Dataset([self.examples[i] for i in indices], self.num_classes, split_tag)


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------

_REQUIRED = {"id", "text", "label"}
_OPTIONAL = {"image", "images", "aspect", "meta"}


def _parse_record(obj: Any, lineno: int, base_dir: Path) -> Example:
    if not isinstance(obj, dict):
        raise SchemaError(f"line {lineno}: expected a JSON object")
    keys = set(obj)
    missing = _REQUIRED - keys
    if missing:
        raise SchemaError(f"line {lineno}: missing field(s) {sorted(missing)}")
    extra = keys - _REQUIRED - _OPTIONAL
    if extra:
        raise SchemaError(f"line {lineno}: unexpected field(s) {sorted(extra)}")
    if not isinstance(obj["label"], int) or isinstance(obj["label"], bool):
        raise SchemaError(f"line {lineno}: label must be an integer")
    if "aspect" in obj and (not isinstance(obj["aspect"], str) or not obj["aspect"]):
        raise SchemaError(f"line {lineno}: aspect must be a non-empty string when present")

    def resolve(p):
        if not isinstance(p, str):
            raise SchemaError(f"line {lineno}: image paths must be strings")
        path = Path(p)
        return str(path if path.is_absolute() else base_dir / path)

    try:
        return Example(
            id=str(obj["id"]),
            text=obj["text"],
            label=obj["label"],
            image=resolve(obj["image"]) if "image" in obj else None,
            images=[resolve(p) for p in obj["images"]] if "images" in obj else None,
            aspect=obj.get("aspect"),
            meta=obj.get("meta", {}),
        )
    except SchemaError as err:
        raise SchemaError(f"line {lineno}: {err}") from None


def load_jsonl(path, num_classes: Optional[int] = None, split_tag: str = "all") -> Dataset:
    """Read a JSONL dataset.

    An optional first line ``{"num_classes": K}`` fixes the class count;
    otherwise it is inferred as ``max(label) + 1``. Relative image paths are
    resolved against the file's directory. Images are not opened here.
    """
    path = Path(path)
    base_dir = path.parent
    examples: list[Example] = []
    header_k = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise SchemaError(f"line {lineno}: invalid JSON ({err.msg})") from None
            if not examples and header_k is None and isinstance(obj, dict) and set(obj) == {"num_classes"}:
                header_k = int(obj["num_classes"])
                continue
            examples.append(_parse_record(obj, lineno, base_dir))
    k = num_classes or header_k
    if k is None:
        k = max((ex.label for ex in examples), default=-1) + 1
    return Dataset(examples, k, split_tag)


def write_dataset(dataset: Dataset, out_dir, filename: str = "dataset.jsonl") -> Path:
    """Write ``dataset`` as JSONL, saving in-memory images as PNGs under ``images/``."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl = out_dir / filename

    def dump_image(img, name):
        if isinstance(img, np.ndarray):
            img_dir.mkdir(exist_ok=True)
            target = img_dir / f"{name}.png"
            Image.fromarray(np.ascontiguousarray(img)).save(target, format="PNG")
            return f"images/{name}.png"
        return str(img)

    with jsonl.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"num_classes": dataset.num_classes}) + "\n")
        for ex in dataset:
            rec: dict[str, Any] = {"id": ex.id, "text": ex.text, "label": int(ex.label)}
            if ex.image is not None:
                rec["image"] = dump_image(ex.image, ex.id)
            else:
                rec["images"] = [dump_image(im, f"{ex.id}_{j}") for j, im in enumerate(ex.images)]
            if ex.aspect is not None:
                rec["aspect"] = ex.aspect
            if ex.meta:
                rec["meta"] = ex.meta
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return jsonl


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def split_sizes(n: int, ratios=(8, 1, 1)) -> tuple[int, int, int]:
    """Generic cut: val and test each get floor(N * r / sum(r)), train takes the rest."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    total = sum(ratios)
    n_val = math.floor(n * ratios[1] / total)
    n_test = math.floor(n * ratios[2] / total)
    return n - n_val - n_test, n_val, n_test


def split(dataset: Dataset, ratios=(8, 1, 1), seed: int = 0, explicit_counts=None):
    """Seeded shuffle followed by a contiguous train/val/test cut."""
    n = len(dataset)
    if explicit_counts is not None:
        counts = tuple(int(c) for c in explicit_counts)
        if len(counts) != 3 or any(c < 0 for c in counts):
            raise ValueError("explicit_counts must be three non-negative integers")
        if sum(counts) != n:
            raise ValueError(f"explicit_counts sum to {sum(counts)} but dataset has {n} examples")
    else:
        counts = split_sizes(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return (
        dataset.subset(order[:a], "train"),
        dataset.subset(order[a:b], "val"),
        dataset.subset(order[b:], "test"),
    )


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------


def format_input(text: str, aspect: Optional[str] = None) -> str:
    if not text or not text.strip():
        raise ValueError("text must be non-empty")
    if aspect is None:
        return f"[CLS] {text} [SEP]"
    if not aspect.strip():
        raise ValueError("aspect must be non-empty; pass None when absent")
    return f"[CLS] {text} [SEP] {aspect} [SEP]"


class Vocab:
    """Whitespace-token vocabulary with fixed special ids PAD=0, CLS=1, SEP=2, UNK=3."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(dict.fromkeys([*SPECIAL_TOKENS, *tokens]))
        self._stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, examples: Iterable[Example]) -> "Vocab":
        toks = set()
        for ex in examples:
            toks.update(ex.text.split())
            if ex.aspect:
                toks.update(ex.aspect.split())
        return cls(sorted(toks))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self._stoi

    def id(self, tok: str) -> int:
        return self._stoi.get(tok, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if tuple(itos[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        return cls(itos[4:])


def encode_text(text: str, aspect: Optional[str], vocab: Vocab, max_len: int) -> list[int]:
    """Token ids for one example, truncated to ``max_len`` keeping CLS first and SEP last."""
    ids = vocab.encode(format_input(text, aspect).split())
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [SEP]
    return ids


# ---------------------------------------------------------------------------
# Images and collation
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    token_ids: torch.Tensor  # [S, n_max] int64
    text_mask: torch.Tensor  # [S, n_max] int64 in {0, 1}
    images: torch.Tensor  # [S, C, H, W] standardized
    labels: torch.Tensor  # [S] int64
    ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    S = size

    def to(self, dtype=None) -> "Batch":
        if dtype is None:
            return self
        return Batch(self.token_ids, self.text_mask, self.images.to(dtype), self.labels, self.ids)


def select_image(example: Example, rng: np.random.Generator) -> ImageLike:
    """The example's single image, or one drawn uniformly from its ``images``."""
    if example.image is not None:
        return example.image
    return example.images[int(rng.integers(len(example.images)))]


def load_image(example: Example, img: ImageLike, image_size: tuple[int, int]) -> np.ndarray:
    """Decode to a float32 [C, H, W] array in [0, 1], resized to ``image_size``."""
    try:
        if isinstance(img, np.ndarray):
            arr = img
            if arr.ndim == 2:
                arr = arr[:, :, None]
            if arr.shape[:2] != tuple(image_size):
                mode = "L" if arr.shape[2] == 1 else "RGB"
                pil = Image.fromarray(np.ascontiguousarray(arr.squeeze(-1) if mode == "L" else arr), mode)
                arr = np.asarray(pil.resize((image_size[1], image_size[0]), Image.BILINEAR))
        else:
            with Image.open(img) as pil:
                pil = pil.convert("RGB")
                if pil.size != (image_size[1], image_size[0]):
                    pil = pil.resize((image_size[1], image_size[0]), Image.BILINEAR)
                arr = np.asarray(pil)
    except (OSError, ValueError) as err:
        raise ImageLoadError(f"cannot read image for example {example.id!r}: {err}") from err
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float32) / 255.0


def standardize(images: np.ndarray) -> np.ndarray:
    return (images - IMAGE_MEAN) / IMAGE_STD


def collate(
    examples: Sequence[Example],
    vocab: Vocab,
    max_len: int,
    image_size: tuple[int, int],
    rng: Optional[np.random.Generator] = None,
    *,
    texts: Optional[Sequence[str]] = None,
    image_transform=None,
) -> Batch:
    """Tokenize, pad and stack a list of examples.

    ``texts`` overrides the examples' texts (used for augmented views) and
    ``image_transform`` is applied to each [C, H, W] image in [0, 1] before
    standardization. ``rng`` drives multi-image selection only.
    """
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    if not examples:
        raise ValueError("cannot collate an empty batch")
    rng = rng if rng is not None else np.random.default_rng(0)
    s = len(examples)
    token_ids = np.full((s, max_len), PAD, dtype=np.int64)
    mask = np.zeros((s, max_len), dtype=np.int64)
    imgs = []
    for i, ex in enumerate(examples):
        text = texts[i] if texts is not None else ex.text
        ids = encode_text(text, ex.aspect, vocab, max_len)
        token_ids[i, : len(ids)] = ids
        mask[i, : len(ids)] = 1
        img = load_image(ex, select_image(ex, rng), image_size)
        if image_transform is not None:
            img = image_transform(img)
        imgs.append(img)
    images = standardize(np.stack(imgs))
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Batch(
        torch.from_numpy(token_ids),
        torch.from_numpy(mask),
        torch.from_numpy(images),
        torch.from_numpy(labels),
        [ex.id for ex in examples],
    )


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Controls for the synthetic text-image corpus.

    Texts are ``text_len`` words drawn from ``noise_tokens`` filler words; when
    the text carries evidence one slot holds an evidence word of the label.
    Images are a ``grid`` x ``grid`` arrangement of ``cell``-pixel squares over
    uniform background noise; evidence is the label's motif painted in one cell.
    """

    num_classes: int = 3
    n: int = 1000
    evidence_per_class: int = 1
    noise_tokens: int = 30
    text_len: int = 6
    p_text: float = 1.0
    p_image: float = 1.0
    complementary: bool = False
    grid: int = 4
    cell: int = 4
    channels: int = 3
    background: float = 0.3
    seed: int = 0

    def validate(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        for name in ("p_text", "p_image", "background"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.text_len < 1 or self.evidence_per_class < 1 or self.grid < 1 or self.cell < 1:
            raise ValueError("text_len, evidence_per_class, grid and cell must be >= 1")
        if self.noise_tokens < 1 and (self.text_len > 1 or self.complementary or self.p_text < 1):
            raise ValueError("noise_tokens must be >= 1 when texts can contain filler words")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if 2 ** (self.cell * self.cell * self.channels) - 1 < self.num_classes:
            raise ValueError("cell too small to hold one distinct motif per class")

    @property
    def image_size(self) -> int:
        return self.grid * self.cell

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec key(s): {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evidence_token(label: int, j: int = 0) -> str:
    return f"ev{label}_{j}"


def noise_token(j: int) -> str:
    return f"w{j}"


def make_motifs(spec: SyntheticSpec) -> np.ndarray:
    """One distinct binary pattern per class, uint8 [K, cell, cell, C] with values {0, 255}."""
    rng = np.random.default_rng([spec.seed, 7919])
    motifs: list[np.ndarray] = []
    seen = set()
    while len(motifs) < spec.num_classes:
        m = rng.integers(0, 2, size=(spec.cell, spec.cell, spec.channels), dtype=np.uint8)
        key = m.tobytes()
        if m.sum() == 0 or key in seen:
            continue
        seen.add(key)
        motifs.append(m * 255)
    return np.stack(motifs)


def synthetic_vocab(spec: SyntheticSpec) -> Vocab:
    toks = [evidence_token(k, j) for k in range(spec.num_classes) for j in range(spec.evidence_per_class)]
    toks += [noise_token(j) for j in range(spec.noise_tokens)]
    return Vocab(toks)


def synthesize(spec: SyntheticSpec) -> Dataset:
    """Generate a labelled corpus whose evidence sits in text, image, or both.

    In complementary mode each example carries its evidence in exactly one
    modality (fair coin), so either modality alone caps accuracy at
    ``0.5 + 0.5 / K``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, k, g, c = spec.n, spec.num_classes, spec.grid, spec.cell
    labels = rng.integers(0, k, size=n)
    if spec.complementary:
        heads = rng.random(n) < 0.5
        has_text, has_image = heads, ~heads
    else:
        has_text = rng.random(n) < spec.p_text
        has_image = rng.random(n) < spec.p_image
    words = rng.integers(0, max(spec.noise_tokens, 1), size=(n, spec.text_len))
    ev_pos = rng.integers(0, spec.text_len, size=n)
    ev_choice = rng.integers(0, spec.evidence_per_class, size=n)
    cells = rng.integers(0, g * g, size=n)
    size = spec.image_size
    hi = int(round(spec.background * 255))
    images = rng.integers(0, hi + 1, size=(n, size, size, spec.channels), dtype=np.uint8)
    motifs = make_motifs(spec)

    examples = []
    width = len(str(n - 1))
    for i in range(n):
        y = int(labels[i])
        toks = [noise_token(int(w)) for w in words[i]]
        meta: dict[str, Any] = {"evidence_pos": None, "motif_cell": None}
        if has_text[i]:
            toks[ev_pos[i]] = evidence_token(y, int(ev_choice[i]))
            meta["evidence_pos"] = int(ev_pos[i])
        if has_image[i]:
            r, col = divmod(int(cells[i]), g)
            images[i, r * c:(r + 1) * c, col * c:(col + 1) * c] = motifs[y]
            meta["motif_cell"] = [r, col]
        img = images[i] if spec.channels == 3 else images[i, :, :, 0]
        examples.append(Example(id=f"syn{i:0{width}d}", text=" ".join(toks), label=y, image=img, meta=meta))
    return Dataset(examples, k, "all")
