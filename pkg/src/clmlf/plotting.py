"""Matplotlib figures written next to the CSV/JSON run outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

LOSS_KEYS = ("L_total", "L_sc", "L_lbcl", "L_dbcl")


def style():
    plt.rcParams.update(
        {
            "figure.dpi": 100,
            "font.size": 10,
            "axes.spines.top": False,
            "axes.spines.right": False,
            "axes.grid": True,
            "grid.alpha": 0.3,
        }
    )


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_history(history, path):
    style()
    epochs = [h["epoch"] for h in history]
    fig, (ax_loss, ax_val) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in LOSS_KEYS:
        ax_loss.plot(epochs, [h[key] for h in history], marker="o", label=key)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean training loss")
    ax_loss.legend(frameon=False)
    if "val_accuracy" in history[0]:
        ax_val.plot(epochs, [h["val_accuracy"] for h in history], "-", label="accuracy")
        ax_val.plot(epochs, [h["val_weighted_f1"] for h in history], "--", label="weighted F1")
        ax_val.plot(epochs, [h["val_macro_f1"] for h in history], ":", label="macro F1")
        ax_val.set_ylim(0, 1.02)
        ax_val.legend(frameon=False)
    ax_val.set_xlabel("epoch")
    ax_val.set_ylabel("validation score")
    return _save(fig, path)


def plot_projection(coords, labels, path, title="representation (PCA)"):
    style()
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for k in np.unique(labels):
        sel = labels == k
        ax.scatter(coords[sel, 0], coords[sel, 1], s=8, alpha=0.7, label=f"class {k}")
    ax.set_title(title)
    ax.legend(frameon=False, markerscale=2)
    return _save(fig, path)


def plot_attention(image, overlay, patch_weights, token, path):
    style()
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    axes[0].imshow(image)
    axes[0].set_title("image")
    axes[1].imshow(overlay)
    axes[1].set_title(f"overlay: {token}")
    im = axes[2].imshow(patch_weights, cmap="jet")
    axes[2].set_title("patch weights")
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
        ax.grid(False)
    return _save(fig, path)


def plot_augment_pairs(originals, augmented, texts, path):
    """Grid of (original, augmented) image pairs with the two texts as titles."""
    style()
    n = len(originals)
    fig, axes = plt.subplots(n, 2, figsize=(6, 2.8 * n), squeeze=False)
    for i, (a, b, (ta, tb)) in enumerate(zip(originals, augmented, texts)):
        for ax, img, txt in ((axes[i, 0], a, ta), (axes[i, 1], b, tb)):
            ax.imshow(img, interpolation="nearest")
            ax.set_title(txt, fontsize=8)
            ax.set_xticks([])
            ax.set_yticks([])
            ax.grid(False)
    return _save(fig, path)
