"""Multi-layer fusion: image tokens, image transformer, joint text-image transformer, attention pooling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import TransformerEncoder, masked_softmax

MODALITIES = ("multimodal", "text")

# fusion-image layer pairs used for the three sentence-level corpora
LAYER_PRESETS = {"3-2": (3, 2), "4-2": (4, 2), "5-1": (5, 1)}


@dataclass
class MLFConfig:
    fusion_layers: int = 3
    image_layers: int = 2
    heads: int = 4
    ffn_dim: int = 64
    d_h: Optional[int] = None  # pooling hidden width, defaults to d_t
    dropout: float = 0.1
    activation: str = "relu"
    modality: str = "multimodal"

    def validate(self, d_t: int):
        if not 1 <= self.fusion_layers <= 6:
            raise ValueError(f"fusion_layers must be in [1, 6], got {self.fusion_layers}")
        if not 1 <= self.image_layers <= 3:
            raise ValueError(f"image_layers must be in [1, 3], got {self.image_layers}")
        if d_t % self.heads:
            raise ValueError(f"d_t={d_t} is not divisible by heads={self.heads}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        return self

    @classmethod
    def preset(cls, name: str, **kwargs) -> "MLFConfig":
        fusion, image = LAYER_PRESETS[name]
        return cls(fusion_layers=fusion, image_layers=image, **kwargs)


class AttentionPool(nn.Module):
    """Score each position with a GELU MLP, softmax over unmasked positions, then project."""

    def __init__(self, d_t: int, d_h: Optional[int] = None):
        super().__init__()
        d_h = d_h or d_t
        self.w1 = nn.Linear(d_t, d_h)
        self.w2 = nn.Linear(d_h, 1)
        self.w_r = nn.Linear(d_t, d_t)

    def scores(self, fused):
        return self.w2(F.gelu(self.w1(fused))).squeeze(-1)

    def forward(self, fused, mask):
        """Returns the pooled representation [S, d_t] and the pooling weights [S, n]."""
        keep = mask.bool()
        if not keep.any(dim=1).all():
            raise ValueError("attention_pool: every row needs at least one unmasked position")
        weights = masked_softmax(self.scores(fused), keep)
        pooled = torch.einsum("sn,snd->sd", weights, fused)
        return F.gelu(self.w_r(pooled)), weights


@dataclass
class MLFOutput:
    R: torch.Tensor  # [S, d_t]
    fused: torch.Tensor  # [S, n_t + n_i, d_t]
    fused_mask: torch.Tensor  # [S, n_t + n_i]
    pool_weights: torch.Tensor  # [S, n_t + n_i]
    fusion_attentions: list = field(default_factory=list)
    image_attentions: list = field(default_factory=list)
    text_attentions: list = field(default_factory=list)
    n_t: int = 0
    n_i: int = 0

    @property
    def attention(self) -> torch.Tensor:
        """Last fusion layer attention, [S, heads, n_t + n_i, n_t + n_i]."""
        return self.fusion_attentions[-1]


class MultiLayerFusion(nn.Module):
    def __init__(self, d_t: int, d_i: int, grid: int, cfg: MLFConfig):
        super().__init__()
        cfg.validate(d_t)
        self.cfg = cfg
        self.d_t, self.d_i, self.grid = d_t, d_i, grid
        self.n_i = grid * grid
        if cfg.modality == "multimodal":
            self.image_proj = nn.Linear(d_i, d_t)
            self.image_pos = nn.Parameter(torch.zeros(self.n_i, d_t))
            self.image_encoder = TransformerEncoder(
                cfg.image_layers, d_t, cfg.heads, cfg.ffn_dim, cfg.dropout, cfg.activation
            )
        self.fusion_encoder = TransformerEncoder(
            cfg.fusion_layers, d_t, cfg.heads, cfg.ffn_dim, cfg.dropout, cfg.activation
        )
        self.pool = AttentionPool(d_t, cfg.d_h)

    def project_image(self, fmap):
        """[S, p, p, d_i] -> row-major flattened tokens [S, p*p, d_t] plus positions."""
        s, p, q, d = fmap.shape
        if d != self.d_i:
            raise ValueError(f"feature map depth {d} does not match d_i={self.d_i}")
        if p * q != self.n_i:
            raise ValueError(f"feature map grid {p}x{q} does not match n_i={self.n_i}")
        return self.image_proj(fmap).reshape(s, p * q, self.d_t) + self.image_pos[None]

    def image_transform(self, tokens):
        return self.image_encoder(tokens)

    def fuse(self, text_hidden, image_tokens, text_mask):
        if image_tokens is None:
            seq, mask = text_hidden, text_mask
        else:
            if text_hidden.shape[-1] != image_tokens.shape[-1]:
                raise ValueError("text and image tokens must share d_t")
            seq = torch.cat([text_hidden, image_tokens], dim=1)
            ones = torch.ones(image_tokens.shape[:2], dtype=text_mask.dtype, device=text_mask.device)
            mask = torch.cat([text_mask, ones], dim=1)
        fused, attentions = self.fusion_encoder(seq, mask)
        return fused, mask, attentions

    def forward(self, text_hidden, text_mask, fmap=None) -> MLFOutput:
        img_attn = []
        image_tokens = None
        if self.cfg.modality == "multimodal":
            if fmap is None:
                raise ValueError("multimodal fusion needs an image feature map")
            image_tokens, img_attn = self.image_transform(self.project_image(fmap))
        fused, mask, attentions = self.fuse(text_hidden, image_tokens, text_mask)
        R, weights = self.pool(fused, mask)
        return MLFOutput(
            R=R,
            fused=fused,
            fused_mask=mask,
            pool_weights=weights,
            fusion_attentions=attentions,
            image_attentions=img_attn,
            n_t=text_hidden.shape[1],
            n_i=0 if image_tokens is None else image_tokens.shape[1],
        )
