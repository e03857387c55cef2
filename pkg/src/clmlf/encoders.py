"""Toy text and image encoders plus the contract for pretrained backbones.

Any text backbone that maps ``(token_ids [S, n_t], mask [S, n_t])`` to a
hidden sequence ``[S, n_t, d_t]`` (CLS state at index 0), and any image
backbone that maps ``[S, C, H, W]`` to a feature map ``[S, p_i, p_i, d_i]``,
can replace the toy modules here. For channels-first backbones (torchvision
ResNet trunks emit ``[S, d_i, p_i, p_i]``) wrap them in
:class:`ChannelsLastAdapter`. No pretrained weights ship with this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import TransformerEncoder


@dataclass
class EncoderConfig:
    vocab_size: int = 64
    max_len: int = 8
    d_t: int = 32
    text_layers: int = 1
    text_heads: int = 4
    text_ffn: int = 64
    d_i: int = 32
    conv_blocks: int = 2
    image_size: int = 16
    channels: int = 3
    dropout: float = 0.1
    activation: str = "relu"

    def validate(self):
        if self.d_t % self.text_heads:
            raise ValueError(f"d_t={self.d_t} is not divisible by text_heads={self.text_heads}")
        if self.max_len < 3:
            raise ValueError("max_len must be at least 3")
        if self.conv_blocks < 1:
            raise ValueError("conv_blocks must be >= 1")
        stride = 2 ** self.conv_blocks
        if self.image_size % stride:
            raise ValueError(
                f"image_size={self.image_size} is not divisible by the total stride {stride}"
            )
        return self

    @property
    def feature_grid(self) -> int:
        return self.image_size // 2 ** self.conv_blocks


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def resnet50_feature_grid(image_size: int) -> int:
    """Spatial side of the last conv stage of a standard ResNet-50 (stride 32)."""
    n = conv_output_size(image_size, 7, 2, 3)  # stem conv
    n = conv_output_size(n, 3, 2, 1)  # max pool
    for stride in (1, 2, 2, 2):  # stages conv2_x .. conv5_x
        n = conv_output_size(n, 3, stride, 1)
    return n


RESNET50_CHANNELS = 2048


class TextEncoderAdapter(Protocol):
    d_t: int

    def __call__(self, token_ids: torch.Tensor, text_mask: torch.Tensor) -> torch.Tensor: ...


class ImageEncoderAdapter(Protocol):
    d_i: int

    def __call__(self, images: torch.Tensor) -> torch.Tensor: ...


class TextEncoder(nn.Module):
    """Token + learned absolute position embeddings followed by masked self-attention layers."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.d_t = cfg.d_t
        self.vocab_size = cfg.vocab_size
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_t)
        self.pos = nn.Embedding(cfg.max_len, cfg.d_t)
        self.layers = TransformerEncoder(
            cfg.text_layers, cfg.d_t, cfg.text_heads, cfg.text_ffn, cfg.dropout, cfg.activation
        )

    def embed(self, token_ids):
        if token_ids.numel() and (int(token_ids.max()) >= self.vocab_size or int(token_ids.min()) < 0):
            raise ValueError(f"token id out of range for vocab_size={self.vocab_size}")
        if token_ids.shape[1] > self.pos.num_embeddings:
            raise ValueError(f"sequence length {token_ids.shape[1]} exceeds max_len {self.pos.num_embeddings}")
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        return self.tok(token_ids) + self.pos(positions)[None]

    def forward(self, token_ids, text_mask, return_attention=False):
        hidden, attn = self.layers(self.embed(token_ids), text_mask)
        return (hidden, attn) if return_attention else hidden


class ImageEncoder(nn.Module):
    """Stride-2 3x3 convolution blocks with GELU; emits a channels-last feature map."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.d_i = cfg.d_i
        self.image_size = cfg.image_size
        blocks = []
        c_in = cfg.channels
        for _ in range(cfg.conv_blocks):
            blocks += [nn.Conv2d(c_in, cfg.d_i, kernel_size=3, stride=2, padding=1), nn.GELU()]
            c_in = cfg.d_i
        self.blocks = nn.Sequential(*blocks)

    def forward(self, images):
        if images.dim() != 4:
            raise ValueError(f"images must be [S, C, H, W], got shape {tuple(images.shape)}")
        return self.blocks(images).permute(0, 2, 3, 1)


class ChannelsLastAdapter(nn.Module):
    """Wrap a backbone emitting ``[S, d_i, p, p]`` so it satisfies the image contract."""

    def __init__(self, backbone: nn.Module, d_i: int):
        super().__init__()
        self.backbone = backbone
        self.d_i = d_i

    def forward(self, images):
        fmap = self.backbone(images)
        if fmap.dim() != 4 or fmap.shape[1] != self.d_i or fmap.shape[2] != fmap.shape[3]:
            raise ValueError(f"backbone emitted {tuple(fmap.shape)}, expected [S, {self.d_i}, p, p]")
        return fmap.permute(0, 2, 3, 1)


def check_feature_map(fmap: torch.Tensor, d_i: int) -> int:
    """Validate a channels-last feature map and return its grid side p_i."""
    if fmap.dim() != 4 or fmap.shape[1] != fmap.shape[2] or fmap.shape[3] != d_i:
        raise ValueError(f"feature map {tuple(fmap.shape)} is not [S, p, p, {d_i}]")
    if not torch.isfinite(fmap).all():
        raise ValueError("feature map contains non-finite values")
    return int(fmap.shape[1])
