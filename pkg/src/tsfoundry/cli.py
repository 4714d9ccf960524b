"""Command-line surface: corpus generation, pre-training, extraction,
zero-shot evaluation, ablations, fine-tuning, fusion and reports.

Exit code 0 only on full success; `--json` emits a machine-readable summary.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsfoundry",
        description="desk-scale time-series representation pipeline",
    )
    parser.add_argument("--json", action="store_true", help="print a JSON summary")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus file")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--mix-fraction", type=float, default=0.25)
    p.add_argument("--output", required=True)
    _add_seed(p)

    p = sub.add_parser("pretrain", help="contrastive pre-training on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--preset", default="toy-2layer")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metrics", default=None, help="probe metric CSV path")
    p.add_argument("--loss-log", default=None, help="per-epoch loss CSV path")
    p.add_argument("--probe-dataset", default=None, help="dataset dir for tracking")
    _add_seed(p)

    p = sub.add_parser("extract", help="embed a dataset with a frozen checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--aggregation", default="cls_mean_concat")
    p.add_argument("--self-ensemble", action="store_true")
    p.add_argument("--output", required=True)
    _add_seed(p)

    p = sub.add_parser("eval", help="zero-shot evaluation on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--aggregation", default="cls_mean_concat")
    p.add_argument("--classifier", choices=["rf", "scaler+logreg"], default="scaler+logreg")
    p.add_argument("--rf-seeds", type=int, default=3)
    p.add_argument("--report", default=None)
    _add_seed(p)

    p = sub.add_parser("ablate", help="run one ablation axis")
    p.add_argument("--axis", required=True,
                   choices=["layer", "aggregation", "se", "kernel", "headdim", "variant", "tokenizer"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None, help="required for layer/aggregation/se")
    p.add_argument("--corpus", default=None, help="required for kernel/headdim/variant/tokenizer")
    p.add_argument("--preset", default="toy-2layer")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--classifier", choices=["rf", "scaler+logreg"], default="scaler+logreg")
    p.add_argument("--report", default=None)
    _add_seed(p)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--aggregation", default="cls")
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--keep-layers", type=int, default=None)
    p.add_argument("--output", required=True)
    _add_seed(p)

    p = sub.add_parser("fuse", help="row-wise fusion of two embedding files")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("report", help="render results JSON into csv/markdown")
    p.add_argument("--results", required=True, help="JSON list of result rows")
    p.add_argument("--format", choices=["csv", "markdown"], default="csv")
    p.add_argument("--output", required=True)

    return parser


def _load_checkpoint(path):
    from .pretrain import load_checkpoint

    return load_checkpoint(path)


def _spec_for(checkpoint, layer, aggregation, self_ensemble=False):
    from .extract import ExtractionSpec, SelfEnsembleSpec

    return ExtractionSpec(
        layer=layer or checkpoint.config.num_layers,
        aggregation=aggregation,
        resize_length=checkpoint.config.resize_length,
        self_ensemble=SelfEnsembleSpec() if self_ensemble else None,
    )


def cmd_synth(args):
    from .synthgen import generate_corpus, save_corpus

    corpus = generate_corpus(args.count, args.length, args.seed, args.mix_fraction)
    save_corpus(corpus, args.output)
    return {"corpus": args.output, "count": corpus.count, "length": corpus.length,
            "manifest_hash": corpus.manifest_hash()}


def cmd_pretrain(args):
    from dataclasses import replace

    from .bench import load_dataset
    from .presets import get_preset
    from .pretrain import pretrain, save_checkpoint
    from .synthgen import load_corpus

    corpus = load_corpus(args.corpus)
    encoder_config, pre, _ = get_preset(args.preset)
    pre = replace(pre, seed=args.seed)
    if args.epochs is not None:
        pre = replace(pre, epochs=args.epochs)
    if args.batch_size is not None:
        pre = replace(pre, batch_size=args.batch_size)
    probes = []
    if args.probe_dataset:
        probes.append((args.probe_dataset, load_dataset(args.probe_dataset)))
    checkpoint, log = pretrain(corpus, encoder_config, pre, probes=probes)
    save_checkpoint(checkpoint, args.checkpoint)
    if args.metrics:
        log.write_csv(args.metrics)
    if args.loss_log:
        log.write_loss_csv(args.loss_log)
    first = log.losses[0][1] if log.losses else None
    last = log.losses[-1][1] if log.losses else None
    return {"checkpoint": args.checkpoint, "epochs": pre.epochs,
            "first_epoch_loss": first, "final_epoch_loss": last,
            "checkpoint_hash": checkpoint.content_hash()}


def cmd_extract(args):
    from .bench import load_dataset
    from .extract import encode_dataset, save_embeddings

    dataset = load_dataset(args.dataset)
    checkpoint = _load_checkpoint(args.checkpoint)
    spec = _spec_for(checkpoint, args.layer, args.aggregation, args.self_ensemble)
    series = dataset.train_series if args.split == "train" else dataset.test_series
    matrix = encode_dataset(series, checkpoint, spec)
    save_embeddings(matrix, args.output)
    return {"embeddings": args.output, "rows": matrix.n_rows, "dim": matrix.dim}


def cmd_eval(args):
    from .bench import emit_report, load_dataset, run_zero_shot

    dataset = load_dataset(args.dataset)
    checkpoint = _load_checkpoint(args.checkpoint)
    spec = _spec_for(checkpoint, args.layer, args.aggregation)
    seeds = list(range(args.rf_seeds)) if args.classifier == "rf" else [args.seed]
    result = run_zero_shot(dataset, checkpoint, spec, args.classifier, seeds)
    if args.report:
        emit_report([result], "csv", args.report)
    return result.to_dict()


def cmd_ablate(args):
    from .bench import (
        emit_report,
        load_dataset,
        run_aggregation_ablation,
        run_layer_ablation,
        run_se_ablation,
        run_zero_shot,
    )

    dataset = load_dataset(args.dataset)
    results = []
    if args.axis in ("layer", "aggregation", "se"):
        if not args.checkpoint:
            raise ValueError(f"--checkpoint is required for axis {args.axis}")
        checkpoint = _load_checkpoint(args.checkpoint)
        if args.axis == "layer":
            for layer, result in run_layer_ablation(dataset, checkpoint, args.classifier):
                results.append(result)
        elif args.axis == "aggregation":
            layer = args.layer or checkpoint.config.num_layers
            for agg, result in run_aggregation_ablation(dataset, checkpoint, layer, args.classifier):
                results.append(result)
        else:
            variant_results, _ = run_se_ablation(
                dataset, checkpoint, args.layer, args.classifier
            )
            results.extend(variant_results[v] for v in sorted(variant_results))
    else:
        # pretrain-then-eval grid over one architecture axis
        from dataclasses import replace

        from .presets import get_grid
        from .pretrain import pretrain
        from .synthgen import load_corpus

        if not args.corpus:
            raise ValueError(f"--corpus is required for axis {args.axis}")
        corpus = load_corpus(args.corpus)
        for name, (encoder_config, pre, spec) in get_grid(args.axis, args.preset):
            pre = replace(pre, seed=args.seed)
            if args.epochs is not None:
                pre = replace(pre, epochs=args.epochs)
            checkpoint, _ = pretrain(corpus, encoder_config, pre)
            result = run_zero_shot(dataset, checkpoint, spec, args.classifier, [args.seed])
            result.pipeline = f"{name},{result.pipeline}"
            results.append(result)
    if args.report:
        emit_report(results, "csv", args.report)
    return [r.to_dict() for r in results]


def cmd_finetune(args):
    from .bench import load_dataset
    from .classify import FinetuneConfig, finetune
    from .encoder import truncate
    from .pretrain import Checkpoint, save_checkpoint

    dataset = load_dataset(args.dataset)
    checkpoint = _load_checkpoint(args.checkpoint)
    if args.keep_layers is not None:
        params, config = truncate(checkpoint.params, checkpoint.config, args.keep_layers)
        checkpoint = Checkpoint(config=config, params=params,
                                projector=checkpoint.projector, metadata=checkpoint.metadata)
    config = FinetuneConfig(
        epochs=args.epochs, batch_size=args.batch_size, aggregation=args.aggregation,
        freeze_encoder=args.freeze_encoder, seed=args.seed,
    )
    result = finetune(checkpoint, dataset, config)
    save_checkpoint(result.checkpoint, args.output)
    last = result.log[-1] if result.log else (0, None, None)
    return {"checkpoint": args.output, "epochs": args.epochs,
            "final_train_loss": last[1], "final_test_accuracy": last[2]}


def cmd_fuse(args):
    from .extract import fuse_embeddings, load_embeddings, save_embeddings

    left = load_embeddings(args.left)
    right = load_embeddings(args.right)
    fused = fuse_embeddings(left, right)
    save_embeddings(fused, args.output)
    return {"embeddings": args.output, "rows": fused.n_rows, "dim": fused.dim}


def cmd_report(args):
    from .bench import ExperimentResult, emit_report

    with open(args.results) as fh:
        rows = json.load(fh)
    results = [
        ExperimentResult(
            dataset=r["dataset"], pipeline=r["pipeline"], seeds=r.get("seeds", []),
            accuracies=r["accuracies"], embedding_dim=r.get("embedding_dim", 0),
        )
        for r in rows
    ]
    emit_report(results, args.format, args.output)
    return {"report": args.output, "rows": len(results)}


_COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "extract": cmd_extract,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "finetune": cmd_finetune,
    "fuse": cmd_fuse,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(summary, indent=1, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
