"""Vanilla (post-norm) transformer encoder that keeps its attention maps."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

ACTIVATIONS = {"relu": F.relu, "gelu": F.gelu}


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    """Truncated-normal weights, zero biases, identity layer norms."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def masked_softmax(scores: torch.Tensor, keep: Optional[torch.Tensor], dim: int = -1) -> torch.Tensor:
    """Softmax with masked entries set to -inf, so they receive exactly zero weight."""
    if keep is not None:
        scores = scores.masked_fill(~keep, float("-inf"))
    return torch.softmax(scores, dim=dim)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None):
        s, n, d = x.shape

        def split(t):
            return t.view(s, n, self.heads, self.d_head).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        keep = None if key_mask is None else key_mask.bool()[:, None, None, :]
        probs = masked_softmax(scores, keep)
        ctx = (self.drop(probs) @ v).transpose(1, 2).reshape(s, n, d)
        return self.out(ctx), probs


class TransformerEncoderLayer(nn.Module):
    """x = LN(x + MHA(x)); x = LN(x + FFN(x))."""

    def __init__(self, d_model: int, heads: int, ffn_dim: int, dropout: float = 0.0, activation: str = "relu"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.attn = MultiHeadSelfAttention(d_model, heads, dropout)
        self.ff1 = nn.Linear(d_model, ffn_dim)
        self.ff2 = nn.Linear(ffn_dim, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)
        self.act = ACTIVATIONS[activation]

    def forward(self, x, key_mask=None):
        a, probs = self.attn(x, key_mask)
        x = self.norm1(x + self.drop(a))
        h = self.ff2(self.drop(self.act(self.ff1(x))))
        x = self.norm2(x + self.drop(h))
        return x, probs


class TransformerEncoder(nn.Module):
    def __init__(self, num_layers: int, d_model: int, heads: int, ffn_dim: int, dropout=0.0, activation="relu"):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerEncoderLayer(d_model, heads, ffn_dim, dropout, activation) for _ in range(num_layers)
        )

    def forward(self, x, key_mask=None):
        """Returns the final hidden states and one attention tensor [S, heads, n, n] per layer."""
        attentions = []
        for layer in self.layers:
            x, probs = layer(x, key_mask)
            attentions.append(probs)
        return x, attentions
