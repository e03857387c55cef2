"""Multi-task training loop, evaluation and finite-difference gradient checking."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentConfig, augment_batch
from .data import Batch, Dataset, Vocab, collate
from .encoders import EncoderConfig
from .fusion import MLFConfig
from .losses import ContrastiveConfig, classification_loss, dbcl_loss, lbcl_loss, total_loss
from .metrics import Metrics, compute_metrics
from .model import CLMLF

log = logging.getLogger(__name__)

# learning rate reported for fine-tuning pretrained BERT/ResNet backbones
PRETRAINED_LR = 2e-5
BATCH_SIZE_PRESETS = (32, 64, 128)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 10
    seed: int = 0
    eval_batch_size: int = 256
    apply_gelu_to_logits: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mlf: MLFConfig = field(default_factory=MLFConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.encoder.validate()
        self.mlf.validate(self.encoder.d_t)
        return self

    @property
    def image_size(self):
        return (self.encoder.image_size, self.encoder.image_size)


class TrainingDiverged(FloatingPointError):
    pass


def build_model(config: TrainConfig, vocab: Vocab, num_classes: int) -> CLMLF:
    # the vocabulary decides the embedding table; record it so checkpoints rebuild the same shape
    config.encoder.vocab_size = len(vocab)
    model = CLMLF(config.encoder, config.mlf, num_classes, config.apply_gelu_to_logits)
    model.vocab = vocab
    return model


def make_optimizer(model, config: TrainConfig):
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.lr,
        betas=tuple(config.betas),
        eps=config.eps,
        weight_decay=config.weight_decay,
    )


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index chunks; the last incomplete batch is kept."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_step(model, examples, config: TrainConfig, aug_rng, select_seed, text_aug, policy):
    """One optimizer-free forward/backward-ready step; returns the loss bundle."""
    vocab = model.vocab
    max_len, image_size = config.encoder.max_len, config.image_size
    ccfg = config.contrastive
    clean = collate(examples, vocab, max_len, image_size, np.random.default_rng(select_seed))
    out = model(clean)
    labels = clean.labels
    L_sc = classification_loss(out.R, labels, model.head)
    zero = out.R.new_zeros(())
    contrastive = clean.size >= 2
    if contrastive and ccfg.lambda_lbcl:
        L_lbcl, n_pos = lbcl_loss(out.R, labels, ccfg)
    elif contrastive:
        with torch.no_grad():
            L_lbcl, n_pos = lbcl_loss(out.R.detach(), labels, ccfg)
    else:
        L_lbcl, n_pos = zero, 0
    L_dbcl = zero
    if contrastive and ccfg.lambda_dbcl:
        aug = augment_batch(
            examples, text_aug, policy, vocab, max_len, image_size, aug_rng, np.random.default_rng(select_seed)
        )
        L_dbcl = dbcl_loss(out.R, model(aug).R, ccfg)
    return total_loss(L_sc, L_lbcl, L_dbcl, ccfg, n_pos)


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Optional[Dataset] = None,
    vocab: Optional[Vocab] = None,
    on_step: Optional[Callable] = None,
):
    """Train a model; returns ``(model, history)`` with the best-validation weights loaded.

    ``history`` holds one dict per epoch with mean loss components and
    validation scores. ``on_step(step, model)`` is called after every update.
    """
    config.validate()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    vocab = vocab or Vocab.build(train_set)
    torch.manual_seed(config.seed)
    model = build_model(config, vocab, train_set.num_classes)
    opt = make_optimizer(model, config)
    order_rng = np.random.default_rng([config.seed, 0])
    aug_rng = np.random.default_rng([config.seed, 1])
    text_aug = config.augment.text_augmenter()
    policy = config.augment.policy()

    history = []
    best_acc, best_state = -1.0, None
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        sums = {"L_sc": 0.0, "L_lbcl": 0.0, "L_dbcl": 0.0, "L_total": 0.0}
        n_pos_total = 0
        n_batches = 0
        for idx in iterate_batches(len(train_set), config.batch_size, order_rng):
            examples = [train_set[int(i)] for i in idx]
            select_seed = [config.seed, 2, epoch, step]
            try:
                bundle = train_step(model, examples, config, aug_rng, select_seed, text_aug, policy)
            except FloatingPointError as err:
                raise TrainingDiverged(f"epoch {epoch} step {step}: {err}") from err
            opt.zero_grad(set_to_none=True)
            bundle.L_total.backward()
            opt.step()
            step += 1
            n_batches += 1
            for key, val in bundle.as_dict().items():
                if key in sums:
                    sums[key] += val
            n_pos_total += bundle.n_pos_pairs
            if on_step is not None:
                on_step(step, model)
        record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}, "n_pos_pairs": n_pos_total}
        if val_set is not None and len(val_set):
            m = evaluate(model, val_set)
            record.update(val_accuracy=m.accuracy, val_weighted_f1=m.weighted_f1, val_macro_f1=m.macro_f1)
            if m.accuracy > best_acc:
                best_acc, best_state = m.accuracy, copy.deepcopy(model.state_dict())
                record["best"] = True
        history.append(record)
        log.info("epoch %d: %s", epoch, {k: round(v, 4) if isinstance(v, float) else v for k, v in record.items()})
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


@torch.no_grad()
def predict(model: CLMLF, dataset: Dataset, batch_size: int = 256):
    """Returns ``(predictions, representations)`` as numpy arrays in dataset order."""
    model.eval()
    rng = np.random.default_rng(0)
    preds, reps = [], []
    enc = model.enc_cfg
    dtype = next(model.parameters()).dtype
    for start in range(0, len(dataset), batch_size):
        batch = collate(
            dataset.examples[start:start + batch_size], model.vocab, enc.max_len, (enc.image_size,) * 2, rng
        ).to(dtype)
        out = model(batch)
        preds.append(out.logits.argmax(dim=1).numpy())
        reps.append(out.R.numpy())
    return np.concatenate(preds), np.concatenate(reps)


def evaluate(model: CLMLF, dataset: Dataset, batch_size: int = 256) -> Metrics:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds, _ = predict(model, dataset, batch_size)
    return compute_metrics(preds, dataset.labels, model.num_classes)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict  # block name -> max relative error
    threshold: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{name}: {err:.3e}{'  FAIL' if name in self.failures else ''}" for name, err in self.errors.items()]
        return "\n".join(lines)


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Mapping[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]],
    eps: float = 1e-5,
    threshold: float = 1e-4,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare autograd gradients with central differences, block by block.

    ``loss_fn`` must be deterministic (dropout off) and should run in double
    precision. The error of a block is ``max|g - g_fd| / max(max|g|, max|g_fd|)``,
    i.e. the worst elementwise deviation relative to the block's gradient scale.
    The scale is floored at ``floor`` so blocks whose gradient vanishes by
    construction (e.g. key biases, which softmax ignores) are judged on the
    absolute deviation instead of amplified round-off.
    """
    params = dict(parameters.items() if isinstance(parameters, Mapping) else parameters)
    names = list(params)
    tensors = [params[n] for n in names]
    analytic = torch.autograd.grad(loss_fn(), tensors, allow_unused=True)
    errors, failures = {}, []
    with torch.no_grad():
        for name, p, g in zip(names, tensors, analytic):
            g = torch.zeros_like(p) if g is None else g
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                plus = loss_fn().item()
                flat[i] = orig - eps
                minus = loss_fn().item()
                flat[i] = orig
                nflat[i] = (plus - minus) / (2 * eps)
            scale = max(g.abs().max().item(), numeric.abs().max().item(), floor)
            err = (g - numeric).abs().max().item() / scale
            errors[name] = err
            if not err < threshold:
                failures.append(name)
    return GradCheckReport(errors, threshold, failures)
