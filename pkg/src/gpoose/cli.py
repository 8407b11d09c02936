"""Command-line front end.

Subcommands mirror the train/test workflow (``embed``, ``train``,
``extend``) and the experiments (``benchmark``, ``heatmap``, ``anomaly``).
Exit status is 0 on success, 2 for input or format problems and 3 for
numerical failures; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from gpoose.bench import (
    BENCH_GRID,
    DatasetSpec,
    ExtenderSpec,
    MethodSpec,
    anomaly_heatmap,
    fit_anomaly_detector,
    run_benchmark,
)
from gpoose.data import (
    GENERATORS,
    PointCloud,
    atomic_write,
    format_csv,
    generate,
    load_csv,
    load_model,
    save_csv,
    save_model,
)
from gpoose.errors import InputError, NumericalError
from gpoose.gpr import LoocvPolicy, predict_batch, train
from gpoose.hyperopt import GridSpec
from gpoose.kernel import KernelParams
from gpoose.manifold import METHODS, embed

EXIT_INPUT, EXIT_NUMERICAL = 2, 3


# -- flag parsing -------------------------------------------------------------


def parse_rho(text: str) -> list[float]:
    """``start:stop:step`` (both ends included when step divides the range) or a comma list."""
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise InputError(f"bad rho range {text!r}")
            n = int(math.floor((stop - start) / step + 1e-9))
            values = [round(start + i * step, 12) for i in range(n + 1)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InputError(f"bad rho list {text!r}") from None
    if not values or any(not 0 < r < 1 for r in values):
        raise InputError(f"rho values must lie in (0, 1), got {text!r}")
    return values


def _floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str, allowed, what: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [n for n in names if n not in allowed]
    if not names or bad:
        raise InputError(f"unknown {what} {bad or text!r}; choose from {sorted(allowed)}")
    return names


def _eps_policy(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def _positive(name, value):
    if value is not None and not value > 0:
        raise InputError(f"--{name} must be positive, got {value}")


def _has_header(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    for cell in first.strip().split(","):
        try:
            float(cell)
        except ValueError:
            return bool(first.strip())
    return False


def read_table(path, label_column=False, allow_empty=False) -> PointCloud:
    """Load a CSV, skipping a header row if the first line is not numeric."""
    try:
        header = _has_header(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    return load_csv(path, header=header, label_column=label_column, allow_empty=allow_empty)


def _cloud(args) -> PointCloud:
    if args.input:
        return read_table(args.input)
    if not args.dataset:
        raise InputError("give --input CSV or --dataset NAME")
    return generate(args.dataset, args.n, args.seed, args.noise_sd)


def _grid(args) -> GridSpec:
    kw = {}
    if args.tau_factors:
        kw["tau_factors"] = tuple(_floats(args.tau_factors))
    if args.noise_factors:
        kw["noise_factors"] = tuple(_floats(args.noise_factors))
    if args.n_starts is not None:
        kw["n_starts"] = args.n_starts
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    return GridSpec(**kw)


# -- commands -----------------------------------------------------------------


def cmd_generate(args):
    cloud = generate(args.dataset, args.n, args.seed, args.noise_sd)
    save_csv(cloud, args.out, header=True)
    if args.params_out:
        save_csv(cloud.manifold_params, args.params_out)


def cmd_embed(args):
    if args.method == "external":
        if not args.embedding:
            raise InputError("--method external needs --embedding CSV")
        cloud = _cloud(args) if (args.input or args.dataset) else None
        emb = read_table(args.embedding)
        if cloud is not None and emb.m != cloud.m:
            raise InputError(f"embedding has {emb.m} rows, point cloud has {cloud.m}")
        coords, params = emb.coords, {"method": "external", "source": str(args.embedding)}
    else:
        cloud = _cloud(args)
        result = embed(cloud, args.method, d=args.dim, k=args.k, eps_policy=_eps_policy(args.eps))
        coords, params = result.coords, {"method": args.method, **result.params_used}
    header = [f"y{j}" for j in range(coords.shape[1])]
    save_csv(coords, args.out, header=header)
    atomic_write(args.out + ".json", json.dumps(params, indent=2, sort_keys=True) + "\n")


def cmd_train(args):
    points = read_table(args.points)
    emb = read_table(args.embedding)
    if points.m != emb.m:
        raise InputError(f"points have {points.m} rows, embedding has {emb.m}")
    if args.no_loocv:
        if args.tau is None:
            raise InputError("--no-loocv needs --tau")
        policy = KernelParams(args.tau, args.noise)
    else:
        policy = LoocvPolicy(_grid(args))
    model = train(points, emb.coords, policy)
    save_model(model, args.out)
    if model.reports:
        report_path = args.report or args.out + ".hyperopt.json"
        doc = [dict(dim=j, **r.to_dict()) for j, r in enumerate(model.reports)]
        atomic_write(report_path, json.dumps(doc, indent=2) + "\n")


def cmd_extend(args):
    model = load_model(args.model)
    test = read_table(args.test, allow_empty=True)
    d = model.d
    header = [f"mean_{j}" for j in range(d)] + [f"var_{j}" for j in range(d)]
    if test.m == 0:
        atomic_write(args.out, format_csv([], header))
        return
    means, variances = predict_batch(model, test.coords)
    atomic_write(args.out, format_csv(np.hstack([means, variances]), header))


def cmd_benchmark(args):
    rho = parse_rho(args.rho)
    datasets = [DatasetSpec(n, args.n, args.data_seed, args.noise_sd)
                for n in _names(args.dataset, GENERATORS, "dataset")]
    methods = [MethodSpec(m, args.dim, args.k, _eps_policy(args.eps))
               for m in _names(args.method, METHODS, "method")]
    extenders = []
    for name in _names(args.extenders, ("gpr", "nystrom"), "extender"):
        if name == "nystrom":
            extenders.append(ExtenderSpec("nystrom", tau=_eps_policy(args.nystrom_tau)))
        else:
            extenders.append(ExtenderSpec("gpr", grid=BENCH_GRID))
    if args.repeats < 1:
        raise InputError("--repeats must be at least 1")
    report = run_benchmark(datasets, methods, extenders, rho, args.repeats, args.seed)
    atomic_write(args.out_prefix + "_repeats.csv", report.per_repeat_csv())
    atomic_write(args.out_prefix + "_aggregate.csv", report.aggregate_csv())
    failed = sum(len(c.failures) for c in report.cells.values())
    if failed:
        print(f"warning: {failed} failed repeat(s) recorded in the report", file=sys.stderr)


def cmd_heatmap(args):
    model = load_model(args.model)
    axes = tuple(int(a) for a in _floats(args.axes))
    if len(axes) != 2:
        raise InputError("--axes needs two indices")
    if args.bbox:
        bbox = _floats(args.bbox)
    else:
        X = model.train_inputs
        bbox = np.c_[X.min(axis=0), X.max(axis=0)].ravel()
    fixed = None
    if args.fix:
        fixed = {}
        for item in args.fix:
            dim, _, value = item.partition("=")
            try:
                fixed[int(dim)] = float(value)
            except ValueError:
                raise InputError(f"--fix expects DIM=VALUE, got {item!r}") from None
    hm = anomaly_heatmap(model, bbox, args.grid_res, axes, fixed)
    atomic_write(args.out, hm.to_csv())


def cmd_anomaly(args):
    train_set = read_table(args.input, label_column=True)
    hyper = KernelParams(args.tau, args.noise) if args.no_loocv else None
    if args.no_loocv and args.tau is None:
        raise InputError("--no-loocv needs --tau")
    det = fit_anomaly_detector(train_set.coords, train_set.labels, d=args.dim,
                               eps_policy=_eps_policy(args.eps), holdout_frac=args.holdout,
                               seed=args.seed, hyper_policy=hyper)
    doc = {
        "threshold": det.threshold if math.isfinite(det.threshold) else str(det.threshold),
        "holdout_accuracy": det.holdout_accuracy,
        "scaler": det.scaler.to_dict(),
        "embedding": det.embedding_params,
        "kernel": [{"tau": dm.params.tau, "noise_var": dm.params.noise_var}
                   for dm in det.model.dims],
    }
    atomic_write(args.out_threshold, json.dumps(doc, indent=2) + "\n")
    if args.test:
        target = read_table(args.test, label_column=args.test_labels)
    else:
        target = train_set
    totals, flags = det.score(target.coords)
    rows = [[t, "anomaly" if f else "normal"] for t, f in zip(totals, flags)]
    atomic_write(args.out_classes, format_csv(rows, ["variance_total", "prediction"]))


# -- parser -------------------------------------------------------------------


def _add_source(p):
    p.add_argument("--input", help="point cloud CSV")
    p.add_argument("--dataset", choices=sorted(GENERATORS), help="synthetic dataset")
    p.add_argument("--n", type=int, default=1000, help="points to generate (default 1000)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--noise-sd", type=float, default=None,
                   help="noise sd (default 1%% of the bounding-box diagonal)")


def _add_hyper(p):
    p.add_argument("--tau", type=float, help="fixed kernel width (with --no-loocv)")
    p.add_argument("--noise", type=float, default=0.0, help="fixed noise variance (default 0)")
    p.add_argument("--no-loocv", action="store_true", help="skip hyperparameter search")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpoose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic point cloud")
    p.add_argument("--dataset", choices=sorted(GENERATORS), required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--params-out", help="also write the manifold parameters")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("embed", help="compute a training embedding")
    _add_source(p)
    p.add_argument("--method", choices=[*METHODS, "external"], required=True)
    p.add_argument("--dim", type=int, default=2, help="target dimension (default 2)")
    p.add_argument("--k", type=int, default=8, help="neighbours for le/isomap (default 8)")
    p.add_argument("--eps", default="median-sq",
                   help="diffusion-map bandwidth: median-sq, knn:K or a number")
    p.add_argument("--embedding", help="embedding CSV for --method external")
    p.add_argument("--out", required=True, help="coordinates CSV; params go to OUT.json")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="fit one GPR per embedding dimension")
    p.add_argument("--points", required=True)
    p.add_argument("--embedding", required=True)
    _add_hyper(p)
    p.add_argument("--tau-factors", help="grid multiples of the median distance")
    p.add_argument("--noise-factors", help="grid multiples of the target variance")
    p.add_argument("--n-starts", type=int, help="optimize from this many best grid points")
    p.add_argument("--max-iter", type=int, help="conjugate-gradient iterations per start")
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--report", help="hyperparameter report JSON (default OUT.hyperopt.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extend", help="predict embedding means and variances")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("benchmark", help="split/extend/score sweep over rho")
    p.add_argument("--dataset", required=True, help="comma-separated dataset names")
    p.add_argument("--method", required=True, help="comma-separated learners")
    p.add_argument("--extenders", default="gpr,nystrom")
    p.add_argument("--rho", default="0.05:0.8:0.05", help="start:stop:step or a comma list")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="base split seed")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--eps", default="median-sq")
    p.add_argument("--nystrom-tau", default="median",
                   help="Nystrom kernel width: median, knn:K or a number")
    p.add_argument("--out-prefix", default="benchmark",
                   help="writes PREFIX_repeats.csv and PREFIX_aggregate.csv")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("heatmap", help="negative total variance over a 2-D grid")
    p.add_argument("--model", required=True)
    p.add_argument("--bbox", help="min_a,max_a,min_b,max_b or min,max per input dimension")
    p.add_argument("--grid-res", type=int, default=40)
    p.add_argument("--axes", default="0,1")
    p.add_argument("--fix", action="append", metavar="DIM=VALUE",
                   help="pin an input dimension (default: training mean)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("anomaly", help="fit and apply the variance-threshold detector")
    p.add_argument("--input", required=True, help="training CSV with a trailing label column")
    p.add_argument("--test", help="CSV to classify (default: the training CSV)")
    p.add_argument("--test-labels", action="store_true", help="test CSV has a label column")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--eps", default="knn:5")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    _add_hyper(p)
    p.add_argument("--out-threshold", required=True)
    p.add_argument("--out-classes", required=True)
    p.set_defaults(func=cmd_anomaly)
    return parser


def _validate(args):
    for name in ("n", "repeats", "grid_res", "dim", "k", "n_starts", "max_iter", "tau"):
        _positive(name.replace("_", "-"), getattr(args, name, None))
    noise = getattr(args, "noise", None)
    if noise is not None and noise < 0:
        raise InputError("--noise must be non-negative")
    holdout = getattr(args, "holdout", None)
    if holdout is not None and not 0 < holdout < 1:
        raise InputError("--holdout must lie in (0, 1)")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate(args)
        args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
