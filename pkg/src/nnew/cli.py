"""Command line interface: ``nnew {weights,bench,synth,info}``.

Exit codes: 0 success, 1 usage error, 2 data or runtime error, 3 estimator
failure (``weights`` and ``synth``).
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .base import EstimationError, StarvationWarning
from .bench import (
    CLASSIFIERS,
    ESTIMATORS,
    config_from_mapping,
    make_weighter,
    oracle_validate,
    parse_shift,
    read_config,
    run_experiment,
)
from .data import DataError, load_csv
from .nnw import normalize_mean_one, save_weights, write_weights

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATOR = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(choices):
    def parse(text):
        items = [s.strip().lower() for s in text.split(",") if s.strip()]
        bad = [s for s in items if s not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(
                f"invalid choice {', '.join(bad) or text!r} (choose from {', '.join(choices)})")
        return items
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nnew", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("weights", help="estimate importance weights for source rows")
    p.add_argument("source_csv")
    p.add_argument("target_csv")
    p.add_argument("--estimator", choices=ESTIMATORS, default="nnew1")
    p.add_argument("-o", "--out", help="weight CSV to write (default: standard output)")
    p.add_argument("--label-column", help="column to drop from both files")
    p.add_argument("--normalize", action="store_true", help="rescale weights to mean one")
    p.add_argument("--acceleration", choices=("brute", "kd_tree"), default="brute")
    p.add_argument("--min-positive", type=int, default=1,
                   help="uLSIF: fewer strictly positive weights than this is a failure")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="run the biased-source benchmark")
    p.add_argument("config", nargs="?", help="key = value config file")
    p.add_argument("--dataset", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--estimator", type=_csv_list(ESTIMATORS))
    p.add_argument("--classifier", type=_csv_list(CLASSIFIERS))
    p.add_argument("--train-mode", type=_csv_list(("half", "minimal")))
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--retained-fraction", type=float)
    p.add_argument("--reduction-factor", type=float)
    p.add_argument("--label-column")
    p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("-o", "--out", help="also write the report here (CSV, or JSON with --format json)")

    p = sub.add_parser("synth", help="compare estimated weights with a known ratio")
    p.add_argument("--shift", default="gauss-mean:0.5", help="gauss-mean:<shift>[:<dim>]")
    p.add_argument("--estimator", choices=ESTIMATORS, default="nnew")
    p.add_argument("--n", type=int, default=1000, help="source and target size")
    p.add_argument("--n-source", type=int)
    p.add_argument("--n-target", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("info", help="list estimators or summarize a CSV")
    p.add_argument("csv", nargs="?")
    p.add_argument("--label-column")
    return parser


def _summary(w) -> str:
    w = np.asarray(w, dtype=float)
    return (f"min={w.min():.6g} mean={w.mean():.6g} max={w.max():.6g} "
            f"zero_weights={int(np.count_nonzero(w == 0))}")


def cmd_weights(args) -> int:
    try:
        source = load_csv(args.source_csv, label_column=args.label_column)
        target = load_csv(args.target_csv, label_column=args.label_column)
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if source.n_features != target.n_features:
        print(f"error: source has {source.n_features} features, target has {target.n_features}",
              file=sys.stderr)
        return EXIT_DATA

    params = {}
    if args.estimator in ("nnew", "nnew1"):
        params = {"acceleration": args.acceleration, "normalize": False}
    elif args.estimator == "ulsif":
        params = {"min_positive": args.min_positive}
    est = make_weighter(args.estimator, random_state=args.seed, **params)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StarvationWarning)
            est.fit(source.features, target.features)
        w = est.weights_
        if getattr(est, "starved_", False):
            raise EstimationError(
                f"weight starvation: {w.size - est.n_positive_} zero-weight points, "
                f"{est.n_positive_} positive (need {args.min_positive})")
        if args.normalize:
            w = normalize_mean_one(w)
    except (EstimationError, ValueError) as exc:
        print(f"estimator failure ({args.estimator}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR

    if args.estimator in ("nnew", "nnew1") and not args.normalize:
        w = est.counts_
    if args.out:
        save_weights(w, args.out)
    else:
        write_weights(w, sys.stdout)
    print(f"n_source={source.n_samples} n_target={target.n_samples} estimator={args.estimator} {_summary(w)}",
          file=sys.stdout if args.out else sys.stderr)
    return EXIT_OK


def _bench_config(args):
    values = read_config(args.config) if args.config else {}
    for item in args.dataset:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--dataset expects NAME=PATH, got {item!r}")
        values.setdefault("datasets", [])
        values["datasets"] = list(values["datasets"]) + [(name, path)]
    overrides = {
        "estimators": args.estimator, "classifiers": args.classifier, "train_modes": args.train_mode,
        "repetitions": args.repetitions, "seed": args.seed, "retained_fraction": args.retained_fraction,
        "reduction_factor": args.reduction_factor, "label_column": args.label_column,
        "standardize": args.standardize,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if not values.get("datasets"):
        raise UsageError("no datasets given (config 'dataset = name, path' or --dataset NAME=PATH)")
    try:
        return config_from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_bench(args) -> int:
    try:
        config = _bench_config(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UsageError as exc:
        print(f"nnew bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = run_experiment(config)
    for line in report.diagnostics:
        print(f"warning: {line}", file=sys.stderr)
    if not report.cells:
        print("error: no dataset could be loaded", file=sys.stderr)
        return EXIT_DATA
    rendered = {"table": report.to_table, "csv": report.to_csv, "json": report.to_json}[args.format]()
    sys.stdout.write(rendered if rendered.endswith("\n") else rendered + "\n")
    if args.out:
        Path(args.out).write_text(report.to_json() if args.format == "json" else report.to_csv(),
                                  encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        shift = parse_shift(args.shift)
    except ValueError as exc:
        print(f"nnew synth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    n_source = args.n_source or args.n
    n_target = args.n_target or args.n
    if n_source < 1 or n_target < 1:
        print("nnew synth: error: sample sizes must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        res = oracle_validate(shift, n_source, n_target, args.estimator, args.seed)
    except EstimationError as exc:
        print(f"estimator failure ({args.estimator}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    print(f"estimator={args.estimator} n_source={n_source} n_target={n_target} "
          f"corr={res.correlation:.6f} msle={res.ms_log_error:.6f} n_positive={res.n_positive}")
    return EXIT_OK


def cmd_info(args) -> int:
    if not args.csv:
        print(f"nnew {__version__}")
        print(f"estimators: {' '.join(ESTIMATORS)}")
        print(f"classifiers: {' '.join(CLASSIFIERS)}")
        return EXIT_OK
    try:
        data = load_csv(args.csv, label_column=args.label_column)
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"name={data.name} n={data.n_samples} d={data.n_features} classes={data.n_classes}")
    if data.labels is not None:
        for name, count in zip(data.label_names, data.class_counts()):
            print(f"  {name}: {count}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"weights": cmd_weights, "bench": cmd_bench, "synth": cmd_synth, "info": cmd_info}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
