"""Command-line entry point: ``clmlf {train,eval,synth,augment-preview,attn,embed}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import back_translate, rand_augment
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_run_config, write_resolved
from .data import (
    SchemaError,
    SyntheticSpec,
    load_image,
    load_jsonl,
    select_image,
    split,
    synthesize,
    write_dataset,
)
from .inspection import (
    example_image,
    export_embeddings,
    export_overlay,
    extract_attention,
    project_2d,
    read_embeddings,
    render_overlay,
    write_coordinates,
)
from . import plotting
from .training import evaluate, train

log = logging.getLogger("clmlf")


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_history(history, path):
    keys = []
    for rec in history:
        keys += [k for k in rec if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


def cmd_synth(args):
    spec = SyntheticSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    path = write_dataset(synthesize(spec), out)
    (out / "synthetic_spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    print(f"wrote {spec.n} examples to {path}")


def _load_data(path):
    if path is None:
        raise ConfigError("no dataset given: set data.path in the config or pass --data")
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return load_jsonl(path)


def cmd_train(args):
    overrides = {"train.seed": args.seed, "train.epochs": args.epochs, "data.path": args.data, "output_dir": args.out}
    cfg = load_run_config(args.config, overrides)
    out = Path(cfg.output_dir)
    dataset = _load_data(cfg.data.path)
    if cfg.data.num_classes:
        dataset.num_classes = cfg.data.num_classes
    tr, va, te = split(dataset, tuple(cfg.data.ratios), cfg.data.split_seed, cfg.data.explicit_counts)
    write_resolved(cfg, out)
    model, history = train(cfg.train, tr, va)
    save_checkpoint(model, cfg.train, out / "checkpoint")
    metrics = {"best_epoch": max((h["epoch"] for h in history if h.get("best")), default=len(history))}
    for name, part in (("val", va), ("test", te)):
        if len(part):
            metrics[name] = evaluate(model, part).to_dict()
    _write_json(metrics, out / "metrics.json")
    _write_history(history, out / "history.csv")
    _write_json({"train": [e.id for e in tr], "val": [e.id for e in va], "test": [e.id for e in te]}, out / "splits.json")
    plotting.plot_history(history, out / "history.png")
    summary = metrics.get("test", metrics.get("val", {}))
    print(f"trained {len(history)} epochs; accuracy={summary.get('accuracy', float('nan')):.4f} -> {out}")


def _subset(dataset, splits_path, split_name):
    if splits_path is None:
        return dataset
    ids = set(json.loads(Path(splits_path).read_text())[split_name])
    return dataset.subset([i for i, ex in enumerate(dataset) if ex.id in ids], split_name)


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _subset(_load_data(args.data), args.splits, args.split)
    metrics = evaluate(model, dataset).to_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(metrics, out / "metrics.json")
    print(f"accuracy={metrics['accuracy']:.4f} weighted_f1={metrics['weighted_f1']:.4f} macro_f1={metrics['macro_f1']:.4f}")


def cmd_augment_preview(args):
    cfg = load_run_config(args.config)
    dataset = _load_data(args.data)
    aug = cfg.train.augment
    text_aug, policy = aug.text_augmenter(), aug.policy()
    rng = np.random.default_rng(args.seed)
    size = cfg.train.encoder.image_size
    picks = rng.choice(len(dataset), size=min(args.n, len(dataset)), replace=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    originals, augmented, texts = [], [], []
    with open(out / "augment_preview.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\toriginal\taugmented\n")
        for i in picks:
            ex = dataset[int(i)]
            img = load_image(ex, select_image(ex, np.random.default_rng(0)), (size, size))
            new_text = back_translate(ex.text, text_aug, rng)
            originals.append(img.transpose(1, 2, 0).squeeze())
            augmented.append(rand_augment(img, policy, rng).transpose(1, 2, 0).squeeze())
            texts.append((ex.text, new_text))
            fh.write(f"{ex.id}\t{ex.text}\t{new_text}\n")
    plotting.plot_augment_pairs(originals, augmented, texts, out / "augment_preview.png")
    print(f"wrote {len(picks)} augmented samples to {out}")


def cmd_attn(args):
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_data(args.data)
    if args.ids:
        wanted = args.ids.split(",")
        index = {ex.id: ex for ex in dataset}
        missing = [i for i in wanted if i not in index]
        if missing:
            raise KeyError(f"unknown example id(s): {', '.join(missing)}")
        examples = [index[i] for i in wanted]
    else:
        examples = dataset.examples[: args.n]
    head = "mean" if args.head == "mean" else int(args.head)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ex in examples:
        amap = extract_attention(model, ex, head=head)
        weights = amap.patch_grid(args.token)
        image = example_image(ex, model.enc_cfg.image_size)
        export_overlay(weights, image, out / f"{ex.id}_overlay.png")
        overlay, _ = render_overlay(weights, image)
        token = (["[CLS]"] + ex.text.split() + ["[SEP]"] * model.enc_cfg.max_len)[args.token]
        plotting.plot_attention(image, overlay, weights, token, out / f"{ex.id}_attention.png")
    print(f"wrote {len(examples)} attention overlays to {out}")


def cmd_embed(args):
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_data(args.data)
    path = export_embeddings(model, dataset, args.out)
    if args.project:
        ids, labels, mat = read_embeddings(path)
        coords = project_2d(mat)
        stem = path.with_suffix("")
        write_coordinates(ids, labels, coords, f"{stem}_pca.csv")
        plotting.plot_projection(coords, labels, f"{stem}_pca.png")
    print(f"wrote embeddings for {len(dataset)} examples to {path}")


def build_parser():
    parser = argparse.ArgumentParser(prog="clmlf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("train", help="train a model and write checkpoint, metrics and history")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--data", help="JSONL dataset (overrides data.path)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--splits", help="splits.json written by train")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic JSONL dataset with PNG images")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment-preview", help="write original/augmented sample pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("attn", help="attention overlays of one text token onto image patches")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ids", help="comma-separated example ids (default: first --n)")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--token", type=int, default=1, help="text position (0 is [CLS])")
    p.add_argument("--head", default="0", help="head index or 'mean'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("embed", help="export representations as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--project", action="store_true", help="also write PCA coordinates and a scatter plot")
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except FileNotFoundError as err:
        missing = err.filename or (err.args[0] if err.args else err)
        print(f"error: file not found: {missing}", file=sys.stderr)
        return 1
    except (ConfigError, SchemaError, ValueError, KeyError, IndexError, OSError) as err:
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
