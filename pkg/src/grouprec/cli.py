"""Command-line experiment runner.

    grouprec synth --like movielens100k --out data/synth_ml.data
    grouprec validate --data data/synth_ml.data --expect movielens100k
    grouprec run --data data/synth_ml.data --k 20 --lambda 0.5 --out results/

`--data` paths that do not exist as given are also tried inside
$GROUPREC_DATA_DIR.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import datagen
from .experiment import (
    EXPECTED_STATS,
    BaselineParams,
    ExperimentConfig,
    StageError,
    run_experiment,
    validate_dataset,
)


def _resolve_data(path):
    if Path(path).exists():
        return path
    base = os.environ.get("GROUPREC_DATA_DIR")
    if base and (Path(base) / path).exists():
        return str(Path(base) / path)
    return path


def _config_from_args(args):
    return ExperimentConfig(
        data_path=_resolve_data(args.data),
        data_format=args.format,
        user_col=args.user_col,
        item_col=args.item_col,
        rating_col=args.rating_col,
        train_fraction=args.train_fraction,
        k_groups=args.k,
        lam=args.lam,
        threshold=args.threshold,
        top_k=args.topk,
        literal_denominator=args.denominator == "literal",
        seed=args.seed,
        out_dir=args.out,
        h1=args.h1,
        h_attn=args.h_attn,
        h2=args.h2,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        baseline=BaselineParams(
            knn_k=args.knn_k,
            svd_epochs=args.svd_epochs,
            svdpp_epochs=args.svdpp_epochs,
            nmf_epochs=args.nmf_epochs,
        ),
    )


def _add_data_args(p):
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--format", choices=("movielens", "csv"), default="movielens")
    p.add_argument("--user-col", default="user")
    p.add_argument("--item-col", default="item")
    p.add_argument("--rating-col", default="rating")


def build_parser():
    parser = argparse.ArgumentParser(prog="grouprec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full experiment: groups, models, evaluation")
    _add_data_args(run)
    run.add_argument("--k", type=int, default=20, help="number of groups")
    run.add_argument("--lambda", dest="lam", type=float, default=0.5,
                     help="profiling loss weight")
    run.add_argument("--threshold", type=float, default=3.5, help="relevance threshold")
    run.add_argument("--topk", type=int, default=10)
    run.add_argument("--denominator", choices=("literal", "capped"), default="literal",
                     help="P@K divides by K (literal) or min(K, candidates)")
    run.add_argument("--train-fraction", type=float, default=0.8)
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--out", default="results")
    run.add_argument("--h1", type=int, default=64)
    run.add_argument("--h-attn", dest="h_attn", type=int, default=32)
    run.add_argument("--h2", type=int, default=64)
    run.add_argument("--learning-rate", type=float, default=1e-3)
    run.add_argument("--epochs", type=int, default=30)
    run.add_argument("--batch-size", type=int, default=128)
    run.add_argument("--knn-k", type=int, default=40)
    run.add_argument("--svd-epochs", type=int, default=20)
    run.add_argument("--svdpp-epochs", type=int, default=20)
    run.add_argument("--nmf-epochs", type=int, default=50)
    run.add_argument("--quiet", action="store_true")

    val = sub.add_parser("validate", help="parse a dataset and print its statistics")
    _add_data_args(val)
    val.add_argument("--expect", choices=tuple(EXPECTED_STATS), default=None)

    synth = sub.add_parser("synth", help="write a synthetic stand-in dataset")
    synth.add_argument("--like", choices=tuple(EXPECTED_STATS), required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=1234)
    return parser


def cmd_run(args):
    config = _config_from_args(args)
    log = (lambda *_: None) if args.quiet else print
    try:
        run_experiment(config, log=log)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args):
    config = ExperimentConfig(
        data_path=_resolve_data(args.data),
        data_format=args.format,
        user_col=args.user_col,
        item_col=args.item_col,
        rating_col=args.rating_col,
    )
    try:
        stats, mismatches = validate_dataset(config, expect=args.expect)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        "users={users} items={items} ratings={ratings} "
        "scale=[{0:g},{1:g}] sparsity={sparsity_percent:.2f}%".format(
            stats["scale"][0], stats["scale"][1], **stats
        )
    )
    for line in mismatches:
        print(f"mismatch: {line}", file=sys.stderr)
    return 1 if mismatches else 0


def cmd_synth(args):
    if args.like == "movielens100k":
        stats = datagen.write_movielens_like(args.out, seed=args.seed)
    else:
        stats = datagen.write_itm_like(args.out, seed=args.seed)
    print(f"wrote {args.out}: {stats}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "validate": cmd_validate, "synth": cmd_synth}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
