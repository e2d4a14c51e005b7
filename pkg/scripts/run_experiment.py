"""Run a config, emit result files, and write per-cell significance.

    python3 scripts/run_experiment.py configs/table_2d.toml [--workers N]
"""
import argparse
import logging
import time
from pathlib import Path

from rftransfer.experiment import (emit_results, load_config, run_experiment,
                                   run_significance, significance_csv)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--alpha", type=float, default=0.05)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = load_config(args.config)
    t0 = time.perf_counter()
    records = run_experiment(config, workers=args.workers)
    logging.info("%d records in %.1f s", len(records), time.perf_counter() - t0)
    emit_results(records, config.output)
    sig = Path(config.output) / "significance.csv"
    sig.write_text(significance_csv(run_significance(records, args.alpha)))
    print((Path(config.output) / "table.md").read_text())


if __name__ == "__main__":
    main()
