import numpy as np
import torch

from clmlf.augment import AugmentConfig, ImageAugmentPolicy, TextAugmenter, augment_batch
from clmlf.data import SyntheticSpec, collate, synthesize, synthetic_vocab
from clmlf.encoders import EncoderConfig
from clmlf.fusion import MLFConfig
from clmlf.model import CLMLF
from clmlf.training import TrainConfig


def tiny_model(
    dtype=torch.float64,
    seed=0,
    d_t=8,
    max_len=4,
    grid=2,
    fusion_layers=2,
    image_layers=1,
    heads=2,
    text_layers=1,
    num_classes=3,
    vocab_size=16,
    activation="relu",
):
    enc = EncoderConfig(
        vocab_size=vocab_size,
        max_len=max_len,
        d_t=d_t,
        text_layers=text_layers,
        text_heads=heads,
        text_ffn=2 * d_t,
        d_i=d_t,
        conv_blocks=2,
        image_size=4 * grid,
        dropout=0.0,
        activation=activation,
    )
    mlf = MLFConfig(
        fusion_layers=fusion_layers, image_layers=image_layers, heads=heads, ffn_dim=2 * d_t, dropout=0.0,
        activation=activation,
    )
    torch.manual_seed(seed)
    return CLMLF(enc, mlf, num_classes).to(dtype)


def tiny_batches(model, s=3, labels=(0, 0, 1), seed=0, text_len=2):
    """Clean and augmented batches matching ``tiny_model``'s geometry."""
    enc = model.enc_cfg
    spec = SyntheticSpec(
        n=s, grid=enc.feature_grid, cell=enc.image_size // enc.feature_grid, text_len=text_len,
        noise_tokens=4, seed=seed, complementary=True,
    )
    ds = synthesize(spec)
    vocab = synthetic_vocab(spec)
    assert len(vocab) <= enc.vocab_size
    model.vocab = vocab
    dtype = next(model.parameters()).dtype
    size = (enc.image_size, enc.image_size)
    clean = collate(ds.examples, vocab, enc.max_len, size).to(dtype)
    aug = augment_batch(
        ds.examples, TextAugmenter("stub", dropout=0.3), ImageAugmentPolicy(2, 9),
        vocab, enc.max_len, size, np.random.default_rng(seed + 1),
    ).to(dtype)
    lab = torch.tensor(labels[:s], dtype=torch.int64)
    clean.labels, aug.labels = lab, lab
    return clean, aug


def random_attention_inputs(gen, s, n_t, n_i, d):
    t = torch.randn(s, n_t, d, generator=gen, dtype=torch.float64)
    i = torch.randn(s, n_i, d, generator=gen, dtype=torch.float64)
    mask = torch.ones(s, n_t, dtype=torch.int64)
    for row in range(s):
        keep = int(torch.randint(1, n_t + 1, (1,), generator=gen))
        mask[row, keep:] = 0
    return t, i, mask


def small_config(**kw):
    cfg = TrainConfig(
        batch_size=16,
        epochs=3,
        seed=0,
        encoder=EncoderConfig(max_len=8, d_t=16, text_heads=2, text_ffn=32, d_i=16, image_size=16),
        mlf=MLFConfig(fusion_layers=1, image_layers=1, heads=2, ffn_dim=32),
        augment=AugmentConfig(text_kind="stub", n_ops=1),
    )
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg
