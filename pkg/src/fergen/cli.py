"""Command-line entry points: generate, stats, export, eval."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .baseline import evaluate, examples_from_manifest, train_linear
from .pipeline import (MANIFEST_NAME, PipelineError, load_config, run_export,
                       run_generate, run_stats)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fergen",
        description="Synthesize labeled 3D facial-expression image datasets.")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="run dataset generation from a config file")
    generate.add_argument("--config", required=True, help="JSON config file path")
    generate.add_argument("--workers", type=int, help="override worker count")
    generate.add_argument("--seed", type=int, help="override random seed")

    stats = sub.add_parser("stats", help="summarize a manifest and verify checksums")
    stats.add_argument("--manifest", required=True, help="manifest.jsonl path")

    export = sub.add_parser("export", help="materialize train/test class directories")
    export.add_argument("--manifest", required=True, help="manifest.jsonl path")
    export.add_argument("--out", required=True, help="export directory")

    evaluate_cmd = sub.add_parser(
        "eval", help="train the linear baseline on a generated dataset")
    evaluate_cmd.add_argument("--manifest", required=True, help="manifest.jsonl path")
    evaluate_cmd.add_argument("--epochs", type=int, default=500)
    evaluate_cmd.add_argument("--lr", type=float, default=0.5)
    evaluate_cmd.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_generate(args) -> int:
    config = load_config(args.config)
    if args.workers is not None:
        config = config.replace(workers=args.workers)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    manifest = run_generate(config)
    train = len(manifest.records_for("train"))
    print(f"wrote {len(manifest.records)} records ({train} train / "
          f"{len(manifest.records) - train} test) to "
          f"{Path(config.output_dir) / MANIFEST_NAME}")
    return 0


def _cmd_stats(args) -> int:
    stats = run_stats(args.manifest)
    return 0 if stats.ok else 1


def _cmd_export(args) -> int:
    counts = run_export(args.manifest, args.out)
    total = sum(counts.values())
    print(f"exported {total} images to {args.out}")
    for (split, class_name), count in sorted(counts.items()):
        print(f"  {split}/{class_name}: {count}")
    return 0


def _cmd_eval(args) -> int:
    train_examples = examples_from_manifest(args.manifest, "train")
    test_examples = examples_from_manifest(args.manifest, "test")
    if not train_examples:
        print("manifest has no training records", file=sys.stderr)
        return 1
    model = train_linear(train_examples, epochs=args.epochs,
                         learning_rate=args.lr, seed=args.seed)
    print(f"final training loss: {model.loss_history[-1]:.6f}")
    if not test_examples:
        print("manifest has no test records; evaluating on the training split")
        test_examples = train_examples
    report = evaluate(model, test_examples)
    print(report.format())
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "stats": _cmd_stats,
    "export": _cmd_export,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (PipelineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
