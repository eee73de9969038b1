"""Command-line driver.

Subcommands: synth, train-tae, train-clsa, evaluate, ablate, gradcheck.
Exit codes: 0 success, 1 usage, 2 data/IO, 3 numeric/dimension.

Settings resolve as command-line flags, then the ``--config`` JSON file,
then built-in defaults. The resolved configuration is stored in the
manifest of every saved model.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import model_store
from .clsa import clsa_train, write_curves_csv
from .dataset import generate_synthetic, load_dataset, save_dataset
from .errors import DimensionError, StoreError, TaeClsaError, UsageError
from .gradsuite import format_results, run_suite
from .pipeline import (
    PipelineConfig,
    build_classifier,
    evaluate_records,
    labelled,
    prepare_splits,
    run_pipeline,
    train_tae,
)
from .preprocess import _check_window

log = logging.getLogger("taeclsa")

WINDOW_GRID = (5, 7, 9, 11)
LATENT_GRID = (4, 6, 8, 10, 12)
# (conv filters, kernel, lstm units) at full scale
UNITS_GRID = (
    (128, 3, 128), (256, 3, 128), (256, 3, 256), (256, 5, 256), (256, 3, 128), (512, 3, 128),
    (512, 5, 128), (512, 3, 256), (500, 3, 512), (1024, 3, 512), (1024, 3, 1024),
)
TAE_LR_GRID = (0.1, 0.01, 0.001)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _odd_window(text: str) -> int:
    v = int(text)
    try:
        _check_window(v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


# flag dest -> PipelineConfig key; "clsa.x" keys go into the nested classifier dict
_TAE_FLAGS = {
    "seed": "seed", "window": "window", "latent": "latent_dim", "epochs": "tae_epochs", "lr": "tae_lr",
    "batch_size": "tae_batch_size", "patience": "tae_patience", "identity_ae": "identity_ae",
    "paper_faithful": "paper_faithful",
}
_CLSA_FLAGS = {
    "seed": "seed", "latent": "latent_dim", "epochs": "clsa_epochs", "lr": "clsa_lr",
    "batch_size": "clsa_batch_size", "paper_faithful": "paper_faithful",
    "finetune_embedding": "clsa.finetune_embedding", "conv_filters": "clsa.conv_filters",
    "kernel_size": "clsa.kernel_size", "lstm_units": "clsa.lstm_units", "dropout": "clsa.dropout",
    "l2": "clsa.l2", "attention": "clsa.attention", "pooling": "clsa.pooling", "output": "clsa.output",
}


def resolve_config(args, flags: dict) -> PipelineConfig:
    """Defaults, overlaid by the JSON config file, overlaid by explicit flags."""
    base: dict = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise StoreError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(base, dict):
            raise UsageError(f"{args.config}: top level must be an object")
    base = {**base, "clsa": dict(base.get("clsa", {}))}
    for dest, key in flags.items():
        value = getattr(args, dest, None)
        if value is None or value is False:
            continue
        if key.startswith("clsa."):
            base["clsa"][key[5:]] = value
        else:
            base[key] = value
    return PipelineConfig.from_dict(base)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_loss_csv(path: Path, train, val) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train", "val"])
        for e, (a, b) in enumerate(zip(train, val), 1):
            w.writerow([e, repr(a), repr(b)])


def _load_with_meta(path):
    c = model_store.read_container(path)
    return model_store.from_container(c), c.meta


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    ds = generate_synthetic(args.per_class, args.samples, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} records to {args.out}")
    return 0


def cmd_train_tae(args) -> int:
    cfg = resolve_config(args, _TAE_FLAGS)
    data = prepare_splits(load_dataset(args.data), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, (rep1, rep2) = train_tae(data.subset("train"), cfg)
    model_store.save(model, out / "tae.taec", meta={"effective_config": cfg.to_dict(), "command": "train-tae"})
    for rep in (rep1, rep2):
        _write_loss_csv(out / f"tae_loss_batch{rep.batch}.csv", rep.train_mse, rep.val_mse)
    _write_json(out / "tae_report.json", {"batch1": rep1.to_dict(), "batch2": rep2.to_dict()})
    for rep in (rep1, rep2):
        print(f"batch {rep.batch}: {rep.epochs} epochs, val MSE {rep.val_mse[0]:.5f} -> {min(rep.val_mse):.5f}, "
              f"test MSE {rep.test_mse:.5f}" + (f" flags={rep.flags}" if rep.flags else ""))
    return 0


def cmd_train_clsa(args) -> int:
    tae, tae_meta = None, {}
    if args.tae:
        tae, tae_meta = _load_with_meta(args.tae)
        if not hasattr(tae, "latent_dim"):
            raise StoreError(f"{args.tae} does not hold a TAE model")
    cfg = resolve_config(args, _CLSA_FLAGS)
    if tae is None:
        cfg = replace(cfg, use_tae=False)
    else:
        explicit = args.latent is not None or "latent_dim" in _config_keys(args)
        if explicit and cfg.latent_dim != tae.latent_dim:
            raise DimensionError(f"TAE latent width {tae.latent_dim} != configured latent_dim {cfg.latent_dim}")
        cfg = replace(cfg, latent_dim=tae.latent_dim, window=tae_meta.get("effective_config", {}).get("window", cfg.window))
    data = prepare_splits(load_dataset(args.data), cfg)
    train, val = data.subset("train"), data.subset("val")
    model = build_classifier(train, cfg, tae)
    model, curves = clsa_train(labelled(model, train), labelled(model, val), model, cfg.clsa_epochs,
                               cfg.clsa_lr, cfg.clsa_batch_size, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_store.save(model, out / "clsa.taec", meta={"effective_config": cfg.to_dict(), "command": "train-clsa"})
    write_curves_csv(curves, out / "curves.csv")
    _write_json(out / "config.json", cfg.to_dict())
    best = max(curves, key=lambda e: (e.val_acc, -e.val_loss))
    print(f"trained {len(curves)} epochs; best val acc {best.val_acc:.4f} at epoch {best.epoch}")
    return 0


def _config_keys(args) -> set:
    if not getattr(args, "config", None):
        return set()
    try:
        return set(json.loads(Path(args.config).read_text()))
    except (OSError, ValueError):
        return set()


def cmd_evaluate(args) -> int:
    model, meta = _load_with_meta(args.model)
    if not hasattr(model, "config") or not hasattr(model, "vocab"):
        raise StoreError(f"{args.model} does not hold a classifier")
    cfg = PipelineConfig.from_dict(meta.get("effective_config", {}))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = prepare_splits(load_dataset(args.data), cfg)
    records = list(data.records) if args.split == "all" else data.subset(args.split)
    report = evaluate_records(model, records, open_vocab=not args.closed_vocab)
    print(report.table(), end="")
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(report.to_json())
    return 0


def _ablation_cells(grid: str, base: PipelineConfig, scale: int):
    if grid == "window":
        for w in WINDOW_GRID:
            yield {"window": w}, replace(base, window=w)
    elif grid == "latent":
        for d in LATENT_GRID:
            yield {"latent_dim": d}, replace(base, latent_dim=d)
    elif grid == "units":
        for conv, k, lstm in UNITS_GRID:
            c = {**base.clsa, "conv_filters": max(1, conv // scale), "kernel_size": k, "lstm_units": max(1, lstm // scale)}
            yield {"paper_conv": conv, "kernel": k, "paper_lstm": lstm, "conv": c["conv_filters"],
                   "lstm": c["lstm_units"]}, replace(base, clsa=c)
    elif grid == "tae":
        for use in (False, True):
            for lr in TAE_LR_GRID:
                yield {"use_tae": use, "lr": lr}, replace(base, use_tae=use, clsa_lr=lr)
    else:
        raise UsageError(f"unknown grid {grid!r}")


def cmd_ablate(args) -> int:
    base = resolve_config(args, {"seed": "seed", "epochs": "clsa_epochs", "tae_epochs": "tae_epochs"})
    clsa = dict(base.clsa)
    clsa.setdefault("conv_filters", 512 // args.scale)
    clsa.setdefault("lstm_units", 256 // args.scale)
    base = replace(base, clsa=clsa)
    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell, cfg in _ablation_cells(args.grid, base, args.scale):
        t0 = time.perf_counter()
        res = run_pipeline(ds, cfg)
        rows.append({
            **cell,
            "accuracy": res.report.accuracy,
            "macro_f1": res.report.macro_f1,
            "param_count": res.model.param_count(),
            "tae_param_count": res.tae.param_count() if res.tae is not None else 0,
        })
        log.info("%s: acc %.4f (%.1fs)", cell, res.report.accuracy, time.perf_counter() - t0)
        print(", ".join(f"{k}={v}" for k, v in rows[-1].items()))
    path = out / f"ablate_{args.grid}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(tol=args.tol, seed=args.seed, points=args.points)
    print(format_results(results, args.tol), end="")
    bad = [r.op for r in results if not r.passed]
    if bad:
        print(f"FAILED: {', '.join(bad)}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taeclsa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic 5-class dataset")
    s.add_argument("--per-class", type=_positive_int, default=50)
    s.add_argument("--samples", type=_positive_int, default=128, help="timesteps per record")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-tae", help="two-batch temporal autoencoder training")
    s.add_argument("--data", required=True)
    s.add_argument("--window", type=_odd_window)
    s.add_argument("--latent", type=_positive_int)
    s.add_argument("--epochs", type=_positive_int)
    s.add_argument("--lr", type=_nonneg_float)
    s.add_argument("--batch-size", type=_positive_int)
    s.add_argument("--patience", type=_positive_int)
    s.add_argument("--identity-ae", action="store_true", help="train target -> target")
    s.add_argument("--paper-faithful", action="store_true", help="balance with SMOTE before splitting")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_tae)

    s = sub.add_parser("train-clsa", help="train the classifier on TAE embeddings")
    s.add_argument("--data", required=True)
    s.add_argument("--tae", help="TAE checkpoint; omit to feed raw 12-wide instants")
    s.add_argument("--latent", type=_positive_int)
    s.add_argument("--epochs", type=_positive_int)
    s.add_argument("--lr", type=_nonneg_float)
    s.add_argument("--batch-size", type=_positive_int)
    s.add_argument("--conv-filters", type=_positive_int)
    s.add_argument("--kernel-size", type=_positive_int)
    s.add_argument("--lstm-units", type=_positive_int)
    s.add_argument("--dropout", type=_nonneg_float)
    s.add_argument("--l2", type=_nonneg_float)
    s.add_argument("--attention", choices=["raw", "projected"])
    s.add_argument("--pooling", choices=["mean", "last", "max"])
    s.add_argument("--output", choices=["softmax", "sigmoid"])
    s.add_argument("--finetune-embedding", action="store_true")
    s.add_argument("--paper-faithful", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_clsa)

    s = sub.add_parser("evaluate", help="per-class metrics on a split")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    s.add_argument("--json", help="write the metric report here")
    s.add_argument("--closed-vocab", action="store_true", help="fail on instants missing from the vocabulary")
    s.add_argument("--seed", type=int, help="override the split seed stored with the model")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="accuracy/size sweep over one grid")
    s.add_argument("--grid", required=True, choices=["window", "latent", "units", "tae"])
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=_positive_int, help="classifier epochs per cell")
    s.add_argument("--tae-epochs", type=_positive_int)
    s.add_argument("--scale", type=_positive_int, default=8, help="divide layer widths by this factor")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op")
    s.add_argument("--tol", type=_positive_float, default=1e-4)
    s.add_argument("--points", type=_positive_int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[list] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TaeClsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
