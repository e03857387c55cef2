"""Classification, label-based contrastive and augmentation-based contrastive objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

SELF_PAIR_MODES = ("exclude", "include")


class ClassifierHead(nn.Module):
    def __init__(self, d_t: int, num_classes: int, apply_gelu_to_logits: bool = True):
        super().__init__()
        if num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        self.num_classes = num_classes
        self.apply_gelu_to_logits = apply_gelu_to_logits
        self.linear = nn.Linear(d_t, num_classes)

    def forward(self, R):
        logits = self.linear(R)
        return F.gelu(logits) if self.apply_gelu_to_logits else logits


@dataclass
class ContrastiveConfig:
    tau: float = 0.07
    normalize: bool = True
    self_pairs: str = "exclude"
    lambda_lbcl: float = 1.0
    lambda_dbcl: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.self_pairs not in SELF_PAIR_MODES:
            raise ValueError(f"self_pairs must be one of {SELF_PAIR_MODES}")


@dataclass
class LossBundle:
    L_sc: torch.Tensor
    L_lbcl: torch.Tensor
    L_dbcl: torch.Tensor
    L_total: torch.Tensor
    n_pos_pairs: int = 0

    def as_dict(self) -> dict:
        return {
            "L_sc": float(self.L_sc.detach()),
            "L_lbcl": float(self.L_lbcl.detach()),
            "L_dbcl": float(self.L_dbcl.detach()),
            "L_total": float(self.L_total.detach()),
            "n_pos_pairs": int(self.n_pos_pairs),
        }


def _check_labels(labels, k):
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ValueError(f"labels must lie in [0, {k})")


def classification_loss(R, labels, head: ClassifierHead):
    _check_labels(labels, head.num_classes)
    return F.cross_entropy(head(R), labels)


def _prepare(R, normalize):
    return F.normalize(R, dim=1) if normalize else R


def lbcl_loss(R, labels, cfg: ContrastiveConfig):
    """Supervised contrastive loss over same-label pairs in the batch.

    Similarities of (optionally L2-normalized) rows are scaled by ``1 / tau``.
    In ``exclude`` mode each anchor's softmax and positives skip the anchor
    itself; in ``include`` mode the diagonal stays in both. The per-anchor
    loss is the negated mean log-probability of its positives, averaged over
    anchors that have at least one. Returns ``(loss, n_pos_pairs)``.
    """
    if R.dim() != 2 or labels.shape != (R.shape[0],):
        raise ValueError("lbcl_loss expects R [S, d] and labels [S]")
    s = R.shape[0]
    z = _prepare(R, cfg.normalize)
    sim = z @ z.T / cfg.tau
    eye = torch.eye(s, dtype=torch.bool, device=R.device)
    positives = labels[:, None] == labels[None, :]
    if cfg.self_pairs == "exclude":
        positives = positives & ~eye
        sim = sim.masked_fill(eye, float("-inf"))
    log_prob = torch.log_softmax(sim, dim=1)
    counts = positives.sum(dim=1)
    n_pos = int(counts.sum())
    has_pos = counts > 0
    if n_pos == 0:
        return R.sum() * 0.0, 0
    # masked positions may hold -inf; zero them before summing
    pos_sum = torch.where(positives, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    per_anchor = -pos_sum[has_pos] / counts[has_pos]
    return per_anchor.mean(), n_pos


def dbcl_loss(R, R_au, cfg: ContrastiveConfig):
    """InfoNCE with clean rows as anchors and the matching augmented row as target."""
    if R.shape != R_au.shape or R.dim() != 2:
        raise ValueError(f"R {tuple(R.shape)} and R_au {tuple(R_au.shape)} must both be [S, d]")
    z, z_au = _prepare(R, cfg.normalize), _prepare(R_au, cfg.normalize)
    logits = z @ z_au.T / cfg.tau
    target = torch.arange(R.shape[0], device=R.device)
    return F.cross_entropy(logits, target)


def total_loss(L_sc, L_lbcl, L_dbcl, cfg: ContrastiveConfig, n_pos_pairs: int = 0) -> LossBundle:
    """L_sc + lambda_lbcl * L_lbcl + lambda_dbcl * L_dbcl; zero-weight terms are skipped."""
    for name, value in (("L_sc", L_sc), ("L_lbcl", L_lbcl), ("L_dbcl", L_dbcl)):
        if not math.isfinite(float(value.detach() if torch.is_tensor(value) else value)):
            raise FloatingPointError(f"non-finite loss component {name}")
    total = L_sc
    if cfg.lambda_lbcl:
        total = total + cfg.lambda_lbcl * L_lbcl
    if cfg.lambda_dbcl:
        total = total + cfg.lambda_dbcl * L_dbcl
    as_tensor = lambda v: v if torch.is_tensor(v) else torch.tensor(float(v))
    return LossBundle(as_tensor(L_sc), as_tensor(L_lbcl), as_tensor(L_dbcl), as_tensor(total), n_pos_pairs)
