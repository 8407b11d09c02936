"""Relative extension error of each learner on the Swiss roll.

For every learner, embed a seeded Swiss roll, keep a fraction ``rho`` of the
rows for training, extend the embedding to the rest with LOOCV-tuned GPR and
report RMSE divided by the RMS norm of the held-out embedding.

    python scripts/relative_error.py --n 1000 --rho 0.1 --seeds 0 1 2 3 4
"""

import argparse

import numpy as np

from gpoose.bench import ExtenderSpec, SplitSpec, extend, rmse, split
from gpoose.data import format_csv, generate
from gpoose.manifold import embed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--methods", nargs="+", default=["dm", "le", "isomap", "mds"])
    ap.add_argument("--out", help="optional CSV path")
    args = ap.parse_args()

    X = generate("swiss_roll", args.n, 0)
    rows = []
    for method in args.methods:
        Y = embed(X, method).coords
        for seed in args.seeds:
            (Xr, Yr), (Xq, Yq) = split(X, Y, SplitSpec(args.rho, seed))
            err = rmse(Yq, extend(Xr, Yr, Xq, ExtenderSpec()))
            rel = err / float(np.sqrt(np.mean(np.sum(Yq**2, axis=1))))
            rows.append([method, seed, err, rel])
            print(f"{method:7s} seed {seed}: rmse {err:.3e}  relative {rel:.3e}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(format_csv(rows, ["method", "split_seed", "rmse", "relative_error"]))


if __name__ == "__main__":
    main()
