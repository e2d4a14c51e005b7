"""Write a toy source/target CSV pair for the csv mode of the runner."""
import sys
from pathlib import Path

import numpy as np

from rftransfer import bench
from rftransfer.experiment import write_csv
from rftransfer.forest import Dataset


def main(out="data"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    inst = bench.make_instance("rosenbrock", 3, seed=5)
    g = np.random.default_rng(5)
    Xs = g.uniform(-5, 5, (3000, 3))
    Xt = g.uniform(-5, 5, (1500, 3))
    ys = np.array([inst.source_value(x) for x in Xs])
    yt = np.array([inst.target_value(x) for x in Xt])
    write_csv(Dataset(Xs, np.log10(ys + 1e-12)), out / "source.csv")
    write_csv(Dataset(Xt, np.log10(yt + 1e-12)), out / "target.csv")
    print(f"wrote {out / 'source.csv'} and {out / 'target.csv'}")


if __name__ == "__main__":
    main(*sys.argv[1:])
