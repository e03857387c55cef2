"""Full sentiment model: encoders -> multi-layer fusion -> classifier head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .data import Batch
from .encoders import EncoderConfig, ImageEncoder, TextEncoder
from .fusion import MLFConfig, MLFOutput, MultiLayerFusion
from .layers import init_weights
from .losses import ClassifierHead


@dataclass
class ModelOutput:
    mlf: MLFOutput
    logits: torch.Tensor

    @property
    def R(self):
        return self.mlf.R


class CLMLF(nn.Module):
    def __init__(
        self,
        enc_cfg: EncoderConfig,
        mlf_cfg: MLFConfig,
        num_classes: int,
        apply_gelu_to_logits: bool = True,
        text_encoder: nn.Module | None = None,
        image_encoder: nn.Module | None = None,
    ):
        super().__init__()
        enc_cfg.validate()
        self.enc_cfg, self.mlf_cfg = enc_cfg, mlf_cfg
        self.num_classes = num_classes
        self.text_encoder = text_encoder or TextEncoder(enc_cfg)
        self.image_encoder = None
        if mlf_cfg.modality == "multimodal":
            self.image_encoder = image_encoder or ImageEncoder(enc_cfg)
        d_i = getattr(self.image_encoder, "d_i", enc_cfg.d_i)
        self.mlf = MultiLayerFusion(enc_cfg.d_t, d_i, enc_cfg.feature_grid, mlf_cfg)
        self.head = ClassifierHead(enc_cfg.d_t, num_classes, apply_gelu_to_logits)
        self.reset_parameters()

    def reset_parameters(self):
        # adapters passed in from outside keep their own weights
        for module in (self.text_encoder, self.image_encoder, self.mlf, self.head):
            if module is not None and not hasattr(module, "backbone"):
                init_weights(module)
        if hasattr(self.mlf, "image_pos"):
            nn.init.trunc_normal_(self.mlf.image_pos, std=0.02, a=-0.04, b=0.04)

    def forward(self, batch: Batch) -> ModelOutput:
        hidden = self.text_encoder(batch.token_ids, batch.text_mask)
        fmap = self.image_encoder(batch.images.to(hidden.dtype)) if self.image_encoder is not None else None
        out = self.mlf(hidden, batch.text_mask, fmap)
        return ModelOutput(out, self.head(out.R))
