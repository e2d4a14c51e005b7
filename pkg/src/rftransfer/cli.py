"""Command-line entry point.

    rftransfer run CONFIG [--seed N] [--out DIR] [--workers N]
    rftransfer stats RECORDS [--alpha A] [--out FILE]
    rftransfer ingest-check CSV

Exit codes: 0 success, 1 configuration/input error, 2 runtime failure
(outputs written so far are kept).
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError, InputError, ParseError
from .experiment import (emit_results, ingest_csv, load_config, read_records,
                         run_experiment, run_significance, significance_csv)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("rftransfer")


def _cmd_run(args):
    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output"] = args.out
        if args.workers is not None:
            overrides["workers"] = args.workers
        if overrides:
            config = dataclasses.replace(config, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        records = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        written = emit_results(records, config.output)
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in written:
        print(p)
    n_err = sum(1 for r in records if r.error)
    if n_err:
        print(f"{n_err} record(s) failed; see errors.csv", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_stats(args):
    try:
        records = read_records(args.records)
    except (OSError, ParseError) as exc:
        print(f"cannot read records: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = significance_csv(run_significance(records, args.alpha))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_ingest_check(args):
    try:
        data = ingest_csv(args.path)
    except (OSError, ParseError, InputError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: n={data.n} d={data.d}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rftransfer",
        description="Affine transfer of random-forest surrogates with CMA-ES.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a TOML config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("stats", help="Kruskal-Wallis + Dunn per result cell")
    p.add_argument("records")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("ingest-check", help="validate an x1..xd,y CSV file")
    p.add_argument("path")
    p.set_defaults(func=_cmd_ingest_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
