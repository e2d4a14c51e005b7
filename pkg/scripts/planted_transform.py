"""Recover a known rotation + translation from a planted target.

The target is the source forest itself seen through a random (W*, v*); the
script reports the transfer loss relative to the target variance and the
distance between the recovered and the planted transform.
"""
import argparse

import numpy as np

from rftransfer import bench
from rftransfer.forest import Dataset, ForestParams, fit_forest, predict_batch
from rftransfer.linalg import random_rotation
from rftransfer.transfer import TransferSettings, tl_cmaes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--function", default="ellipsoid")
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--n-transfer", type=int, default=100)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--budget", type=int, default=20_000)
    args = ap.parse_args()

    d = args.dim
    g = np.random.default_rng(0)
    f = bench.BenchmarkFunction(args.function, d)
    X = bench.sample_uniform(1000 * d, d, -5, 5, g)
    source = fit_forest(bench.build_dataset(f, X, log=True), ForestParams(), g)

    print("seed  loss/var    |W-W*|    |v-v*|   evals")
    for seed in range(args.seeds):
        sg = np.random.default_rng([seed, 1])
        W, v = random_rotation(d, sg), sg.uniform(-1, 1, d)
        Xt = bench.sample_uniform(args.n_transfer, d, -5, 5, sg)
        y = predict_batch(source, Xt @ W.T + v)
        t, res = tl_cmaes(source, Dataset(Xt, y),
                          TransferSettings(total_budget=args.budget), rng=seed)
        print(f"{seed:4d}  {res.best_f / np.var(y):9.2e}  {np.abs(t.W - W).max():8.2e}"
              f"  {np.abs(t.v - v).max():8.2e}  {res.evaluations:6d}")


if __name__ == "__main__":
    main()
