"""Command-line entry point.

Subcommands: check, train, xval, eval, predict, gradcheck, synth,
grid-layers. Training-surface defaults follow the reference experimental
setup (3 graph layers, dropout 0.5, gamma 2, beta 0.5, batch 20); the
learning rate defaults to 1e-5 with --embeddings and 1e-3 in internal
context mode. Identical flags plus seed produce byte-identical artifacts
(timestamps in report metadata aside).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import numerics as nm
from .data import (DataError, SyntheticTruth, gen_synthetic, load_corpus,
                   load_ctxemb, record_to_json, save_corpus, Vocab)
from .evaluation import (EvaluationError, make_folds, prf1, run_cross_validation)
from .graph import GraphError
from .model import ModelError
from .penman import PenmanError, parse_penman, serialize_penman
from .training import (Pipeline, TrainConfig, TrainingError, fit)
from . import report as rpt


class UsageError(ValueError):
    pass


def _add_train_flags(sp: argparse.ArgumentParser, require_seed: bool) -> None:
    sp.add_argument("--embeddings", default=None,
                    help="contextual-embedding file (CTXEMB); switches to external context mode")
    sp.add_argument("--layers", type=int, default=3,
                    help="graph convolution layers (default: 3)")
    sp.add_argument("--lr", type=float, default=None,
                    help="learning rate (default: 1e-5 with --embeddings, else 1e-3)")
    sp.add_argument("--dropout", type=float, default=0.5,
                    help="dropout rate (default: 0.5)")
    sp.add_argument("--gamma", type=float, default=2.0,
                    help="focal-loss focusing exponent (default: 2.0)")
    sp.add_argument("--beta", type=float, default=0.5,
                    help="positive-class loss weight (default: 0.5; 0.75 for sparse corpora)")
    sp.add_argument("--batch", type=int, default=20,
                    help="mini-batch size (default: 20)")
    sp.add_argument("--pos-rate", type=int, default=1,
                    help="positive oversampling factor (default: 1; 5 for sparse corpora)")
    sp.add_argument("--neg-rate", type=float, default=1.0,
                    help="negative keep probability (default: 1.0; 0.3 for sparse corpora)")
    sp.add_argument("--epochs", type=int, default=50,
                    help="max training epochs (default: 50)")
    sp.add_argument("--patience", type=int, default=10,
                    help="early-stop patience in epochs without dev-F1 gain (default: 10)")
    sp.add_argument("--hidden", type=int, default=64,
                    help="hidden width in internal mode (default: 64; external mode uses the file dim)")
    sp.add_argument("--ablation", choices=["full", "wo-stru", "wo-path", "wo-cent"],
                    default="full", help="ablation switch (default: full)")
    sp.add_argument("--seed", type=int, required=require_seed,
                    default=None if require_seed else 7,
                    help="random seed (required for training subcommands)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causegraph",
                                 description="Event causality identification over semantic graphs")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="validate a corpus file and its PENMAN round-trips")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train on a corpus (10%% of documents held out as dev)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    _add_train_flags(sp, require_seed=True)

    sp = sub.add_parser("xval", help="k-fold cross-validation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["cross-topic", "random"], default="cross-topic",
                    help="fold protocol (default: cross-topic)")
    sp.add_argument("--k", type=int, default=5, help="fold count (default: 5)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel fold workers (default: 1)")
    _add_train_flags(sp, require_seed=True)

    sp = sub.add_parser("eval", help="evaluate a saved checkpoint on a corpus")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("predict", help="per-pair probabilities from a saved checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--embeddings", default=None)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("gradcheck", help="finite-difference verification of every model block")
    sp.add_argument("--out", default=None)
    sp.add_argument("--hidden", type=int, default=10,
                    help="hidden width of the verification fixtures (default: 10)")

    sp = sub.add_parser("synth", help="generate the synthetic benchmark corpus")
    sp.add_argument("--docs", type=int, default=66, help="document count (default: 66)")
    sp.add_argument("--seed", type=int, default=7, help="random seed (default: 7)")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("grid-layers", help="cross-validated sweep over the layer count")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["cross-topic", "random"], default="cross-topic")
    sp.add_argument("--k", type=int, default=5, help="fold count (default: 5)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--layers-max", type=int, default=5,
                    help="sweep layers 1..layers-max (default: 5)")
    _add_train_flags(sp, require_seed=True)
    return ap


def _train_config(args, mode: str) -> TrainConfig:
    lr = args.lr if args.lr is not None else (1e-5 if mode == "external" else 1e-3)
    return TrainConfig(
        lr=lr, dropout=args.dropout, layers=args.layers, gamma=args.gamma,
        beta=args.beta, batch_size=args.batch, pos_rate=args.pos_rate,
        neg_rate=args.neg_rate, epochs=args.epochs, seed=args.seed,
        ablation=args.ablation, hidden=args.hidden, patience=args.patience,
        mode=mode)


def _load_inputs(args):
    records, _ = load_corpus(args.data, fail_fast=True)
    embeddings = None
    mode = "internal"
    if getattr(args, "embeddings", None):
        embeddings = load_ctxemb(args.embeddings)
        mode = "external"
    return records, embeddings, mode


def _save_model(out_dir: Path, stem: str, pipe: Pipeline) -> None:
    nm.save_checkpoint(out_dir / f"{stem}.bin", pipe.params)
    meta = {
        "version": 1,
        "config": dataclasses.asdict(pipe.config),
        "vocabs": {name: v.to_list() for name, v in pipe.vocabs.items()},
    }
    rpt.write_json(out_dir / f"{stem}.json", meta)


def _load_model(checkpoint: str, embeddings) -> Pipeline:
    ckpt = Path(checkpoint)
    meta = json.loads(ckpt.with_suffix(".json").read_text(encoding="utf-8"))
    config = TrainConfig(**meta["config"])
    vocabs = {name: Vocab.from_list(v) for name, v in meta["vocabs"].items()}
    params = nm.load_checkpoint(ckpt)
    return Pipeline(config, vocabs, params, embeddings)


def _write_predictions(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, e1, e2, p0, p1, pred, label in rows:
            fh.write(json.dumps({
                "doc_id": doc_id, "e1": e1, "e2": e2,
                "p0": p0, "p1": p1, "prediction": pred, "label": label,
            }) + "\n")


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_check(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, skips = load_corpus(args.data, fail_fast=False)
    roundtrip_failures = []
    for rec in records:
        try:
            g = parse_penman(rec.amr)
            g2 = parse_penman(serialize_penman(g))
            same = (sorted(c for _, c in g.nodes) == sorted(c for _, c in g2.nodes)
                    and len(g.edges) == len(g2.edges))
            if not same:
                roundtrip_failures.append(rec.doc_id)
        except (PenmanError, ValueError) as exc:
            roundtrip_failures.append(f"{rec.doc_id}: {exc}")
    payload = {
        "documents": len(records),
        "pairs": sum(len(r.pairs) for r in records),
        "skipped_lines": [{"line": ln, "error": msg} for ln, msg in skips],
        "roundtrip_failures": roundtrip_failures,
    }
    rpt.write_json(out_dir / "validation_report.json", payload)
    ok = not skips and not roundtrip_failures
    print(f"check: {len(records)} documents, {payload['pairs']} pairs, "
          f"{len(skips)} bad lines, {len(roundtrip_failures)} round-trip failures")
    return 0 if ok else 1


def _split_dev(records, seed: int):
    names = sorted(r.doc_id for r in records)
    rng = np.random.default_rng(seed)
    names = [names[i] for i in rng.permutation(len(names))]
    n_dev = max(1, int(round(0.1 * len(names))))
    dev_ids = set(names[:n_dev])
    return ([r for r in records if r.doc_id not in dev_ids],
            [r for r in records if r.doc_id in dev_ids])


def _cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, embeddings, mode = _load_inputs(args)
    config = _train_config(args, mode)
    train_recs, dev_recs = _split_dev(records, config.seed)
    pipe, train_report = fit(train_recs, dev_recs, config, embeddings)
    _save_model(out_dir, "checkpoint", pipe)
    train_report.write_jsonl(out_dir / "train_report.jsonl")
    by_id = {r.doc_id: r for r in records}
    refs, _ = pipe.usable_pairs(dev_recs)
    preds, labels, _probs = pipe.predict(by_id, refs)
    dev = prf1(preds, labels)
    rpt.write_metrics(out_dir, "metrics",
                      [(f"dev ({config.ablation})", *dev.rounded())],
                      extra={"confusion": dev.as_dict()})
    rpt.plot_training_curve(
        out_dir / "training_curve.png",
        [ep.epoch for ep in train_report.epochs],
        [ep.loss for ep in train_report.epochs],
        [ep.dev_f1 for ep in train_report.epochs])
    print(f"train: best dev F1 {train_report.best_dev_f1:.1f} "
          f"at epoch {train_report.best_epoch}")
    return 0


def _cmd_xval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, embeddings, mode = _load_inputs(args)
    config = _train_config(args, mode)
    plan = make_folds(records, args.mode, args.k, seed=config.seed)
    agg, results = run_cross_validation(records, plan, config, embeddings, jobs=args.jobs)
    rows = [(f"fold{r.fold}", *r.metrics.rounded()) for r in results]
    rows.append((f"pooled ({config.ablation})", *agg.rounded()))
    rpt.write_metrics(out_dir, "metrics", rows, extra={"confusion": agg.as_dict()})
    all_preds = []
    for r in results:
        _save_model(out_dir, f"checkpoint_fold{r.fold}", r.pipeline)
        r.report.write_jsonl(out_dir / f"fold{r.fold}_report.jsonl")
        all_preds.extend(r.predictions)
    _write_predictions(out_dir / "predictions.jsonl", all_preds)
    rpt.plot_fold_f1(out_dir / "fold_f1.png",
                     [r.metrics.f1 for r in results], agg.f1)
    p, rcl, f1 = agg.rounded()
    print(f"xval: pooled P {p:.1f} R {rcl:.1f} F1 {f1:.1f} over {plan.k} folds")
    return 0


def _cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, _ = load_corpus(args.data, fail_fast=True)
    embeddings = load_ctxemb(args.embeddings) if args.embeddings else None
    pipe = _load_model(args.checkpoint, embeddings)
    by_id = {r.doc_id: r for r in records}
    refs, _ = pipe.usable_pairs(records)
    preds, labels, _probs = pipe.predict(by_id, refs)
    metrics = prf1(preds, labels)
    rpt.write_metrics(out_dir, "metrics", [("eval", *metrics.rounded())],
                      extra={"confusion": metrics.as_dict()})
    p, r, f1 = metrics.rounded()
    print(f"eval: P {p:.1f} R {r:.1f} F1 {f1:.1f} on {len(refs)} pairs")
    return 0


def _cmd_predict(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, _ = load_corpus(args.data, fail_fast=True)
    embeddings = load_ctxemb(args.embeddings) if args.embeddings else None
    pipe = _load_model(args.checkpoint, embeddings)
    by_id = {r.doc_id: r for r in records}
    refs, _ = pipe.usable_pairs(records)
    preds, labels, probs = pipe.predict(by_id, refs)
    rows = []
    for ref, pred, (p0, p1) in zip(refs, preds, probs):
        pair = pipe.features(by_id[ref.doc_id]).pairs[ref.pair_index].pair
        rows.append((ref.doc_id, pair.e1, pair.e2, p0, p1, pred, ref.label))
    _write_predictions(out_dir / "predictions.jsonl", rows)
    print(f"predict: wrote {len(rows)} pair probabilities")
    return 0


def _cmd_gradcheck(args) -> int:
    from .verify import run_gradcheck

    results, elapsed, passed = run_gradcheck(hidden=args.hidden)
    for block, err in results.items():
        status = "PASS" if err <= 1e-4 else "FAIL"
        print(f"gradcheck {block:<20} max relative error {err:.3e}  [{status}]")
    print(f"gradcheck finished in {elapsed:.1f}s")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        rpt.write_json(out_dir / "gradcheck.json",
                       {"results": results, "elapsed_seconds": elapsed, "passed": passed})
    return 0 if passed else 1


def _cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, truths = gen_synthetic(n_docs=args.docs, seed=args.seed)
    save_corpus(out_dir / "corpus.jsonl", records)
    rpt.write_json(out_dir / "truth.json",
                   {"docs": [dataclasses.asdict(t) for t in truths],
                    "positives": sum(t.label for t in truths),
                    "total": len(truths)})
    print(f"synth: wrote {len(records)} documents "
          f"({sum(t.label for t in truths)} positive pairs)")
    return 0


def _cmd_grid_layers(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, embeddings, mode = _load_inputs(args)
    sweep = list(range(1, args.layers_max + 1))
    rows, f1s = [], []
    for layers in sweep:
        config = _train_config(args, mode)
        config.layers = layers
        plan = make_folds(records, args.mode, args.k, seed=config.seed)
        agg, _results = run_cross_validation(records, plan, config, embeddings,
                                             jobs=args.jobs)
        rows.append((f"layers={layers}", *agg.rounded()))
        f1s.append(agg.f1)
        print(f"grid-layers: L={layers} pooled F1 {agg.rounded()[2]:.1f}")
    rpt.write_metrics(out_dir, "grid", rows)
    rpt.plot_layer_sweep(out_dir / "layer_sweep.png", sweep, f1s)
    return 0


_COMMANDS = {
    "check": _cmd_check,
    "train": _cmd_train,
    "xval": _cmd_xval,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "grid-layers": _cmd_grid_layers,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DataError, EvaluationError, GraphError, ModelError, PenmanError,
            TrainingError, nm.ShapeMismatch, nm.CheckpointError, OSError) as exc:
        record = {"error": type(exc).__name__, "detail": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
