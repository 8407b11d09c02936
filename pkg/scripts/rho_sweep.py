"""Mean RMSE against the training fraction for GPR and Nystrom extension.

Writes ``PREFIX_repeats.csv`` and ``PREFIX_aggregate.csv``; the aggregate
file has one row per (dataset, method, extender, rho) with the mean RMSE and
its log, ready for plotting.

    python scripts/rho_sweep.py --rho 0.05:0.8:0.05 --repeats 10 --out-prefix sweep
"""

import argparse

from gpoose.bench import DatasetSpec, ExtenderSpec, MethodSpec, run_benchmark
from gpoose.cli import parse_rho
from gpoose.data import atomic_write


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--datasets", default="swiss_roll,toroidal_helix")
    ap.add_argument("--methods", default="dm,isomap")
    ap.add_argument("--rho", default="0.05:0.8:0.05")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--out-prefix", default="rho_sweep")
    args = ap.parse_args()

    report = run_benchmark(
        [DatasetSpec(d, n=args.n) for d in args.datasets.split(",")],
        [MethodSpec(m) for m in args.methods.split(",")],
        [ExtenderSpec("gpr"), ExtenderSpec("nystrom")],
        parse_rho(args.rho),
        repeats=args.repeats,
    )
    atomic_write(args.out_prefix + "_repeats.csv", report.per_repeat_csv())
    atomic_write(args.out_prefix + "_aggregate.csv", report.aggregate_csv())
    print(report.aggregate_csv(), end="")


if __name__ == "__main__":
    main()
