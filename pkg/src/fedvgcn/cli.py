"""Command-line interface.

    fedvgcn run --dataset DIR --name cora --setting federated --out records.jsonl
    fedvgcn compare records.jsonl [more.jsonl ...] [--out merged.jsonl]
    fedvgcn stats --dataset DIR --name cora

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import sys

from .graph import DataError
from .harness import (
    SETTINGS,
    ConfigError,
    ExperimentConfig,
    compare,
    read_records,
    run,
    write_records,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedvgcn",
        description="Vertically federated GraphSage experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment setting")
    p_run.add_argument("--dataset", required=True, help="directory with <name>.content/.cites")
    p_run.add_argument("--name", required=True, help="dataset name (cora, citeseer, pubmed, ...)")
    p_run.add_argument("--setting", required=True, choices=SETTINGS)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--epochs", type=int, default=100)
    p_run.add_argument("--out", default=None, help="append the run record to this JSONL path")
    p_run.add_argument("--feature-ratio", type=float, default=0.5)
    p_run.add_argument("--edge-ratio", type=float, default=0.5)
    p_run.add_argument("--key-bits", type=int, default=512)
    p_run.add_argument("--frac-bits", type=int, default=32)
    p_run.add_argument("--scalar-bits", type=int, default=16)
    p_run.add_argument("--activation-a", default="auto")
    p_run.add_argument("--learning-rate", type=float, default=1e-5)
    p_run.add_argument("--dropout", type=float, default=0.5)
    p_run.add_argument("--unsup-weight", type=float, default=0.0)
    p_run.add_argument("--hidden", type=int, default=64)
    p_run.add_argument("--subsample", type=int, default=None, help="train on N sampled nodes")
    p_run.add_argument(
        "--parallel-folds", type=int, default=None,
        help="worker processes for federated folds (default: min(5, cpus))",
    )
    p_run.add_argument(
        "--full-crypto", action="store_true",
        help="production crypto parameters (2048-bit keys, fresh obfuscation)",
    )
    p_run.add_argument(
        "--no-verify-stats", action="store_true",
        help="skip the reference-statistics check for known dataset names",
    )

    p_cmp = sub.add_parser("compare", help="render a comparison table from records")
    p_cmp.add_argument("records", nargs="+", help="JSONL record files")
    p_cmp.add_argument("--out", default=None, help="write the merged records here")

    p_stats = sub.add_parser("stats", help="print dataset statistics")
    p_stats.add_argument("--dataset", required=True)
    p_stats.add_argument("--name", default=None, help="default: every dataset in the directory")
    return parser


def _cmd_run(args) -> int:
    activation = args.activation_a
    if activation != "auto":
        activation = float(activation)
    config = ExperimentConfig(
        dataset_dir=args.dataset,
        name=args.name,
        setting=args.setting,
        feature_ratio=args.feature_ratio,
        edge_ratio=args.edge_ratio,
        epochs=args.epochs,
        seed=args.seed,
        key_bits=2048 if args.full_crypto else args.key_bits,
        frac_bits=args.frac_bits,
        scalar_bits=args.scalar_bits,
        activation_a=activation,
        learning_rate=args.learning_rate,
        dropout=args.dropout,
        unsup_weight=args.unsup_weight,
        hidden=args.hidden,
        subsample_nodes=args.subsample,
        parallel_folds=args.parallel_folds,
        full_crypto=args.full_crypto,
        verify_stats=not args.no_verify_stats,
    )
    record = run(config)
    print(f"setting:        {config.setting}")
    print(f"dataset:        {config.name}")
    print(f"fold accuracies: {[round(a, 4) for a in record.fold_accuracies]}")
    print(f"mean accuracy:  {record.mean_accuracy:.4f}")
    print(f"wall time:      {record.wall_time_s:.1f}s")
    if record.counters:
        print(f"ciphertext units: {record.counters.get('total_units')}")
    if args.out:
        existing = []
        try:
            existing = read_records(args.out)
        except FileNotFoundError:
            pass
        write_records(existing + [record], args.out)
        print(f"record appended to {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    records = []
    for path in args.records:
        records.extend(read_records(path))
    print(compare(records, out_path=args.out))
    return EXIT_OK


def _cmd_stats(args) -> int:
    import glob
    import os

    from .harness import stats_report

    if args.name is not None:
        names = [args.name]
    else:
        names = sorted(
            os.path.splitext(os.path.basename(p))[0]
            for p in glob.glob(os.path.join(args.dataset, "*.content"))
        )
        if not names:
            raise DataError(f"no *.content files under {args.dataset}")
    for i, name in enumerate(names):
        if i:
            print()
        print(stats_report(args.dataset, name))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "stats":
            return _cmd_stats(args)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
