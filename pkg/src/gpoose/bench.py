"""Extension benchmarks, anomaly heatmaps and the variance-threshold detector.

The benchmark embeds the full dataset once per learner, then for every
training fraction ``rho`` and repeat draws a random split, extends the
embedding from the training part to the held-out part and scores the
extension by RMSE against the held-out true embedding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from gpoose.data import PointCloud, apply_minmax, fit_minmax, format_csv, generate
from gpoose.errors import InputError, NumericalError
from gpoose.gpr import GprModel, LoocvPolicy, predict_batch, predict_mean, train
from gpoose.hyperopt import GridSpec
from gpoose.kernel import KernelParams, as_coords
from gpoose.manifold import embed
from gpoose.spectral import kernel_embedding, nystrom_regress

ANOMALY, NORMAL = "anomaly", "normal"

# Benchmark default: CG from the best grid point only, looser objective tolerance.
BENCH_GRID = GridSpec(n_starts=1, f_tol=1e-7)


# -- splitting and scoring ----------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    rho: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise InputError(f"rho must lie in (0, 1), got {self.rho}")


def split_indices(m: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Random training/test index sets with ``round(rho m)`` training rows."""
    n_train = int(math.floor(spec.rho * m + 0.5))
    if n_train < 2:
        raise InputError(f"rho={spec.rho} leaves {n_train} training point(s) out of {m}")
    perm = np.random.default_rng(spec.seed).permutation(m)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(X, Y, spec: SplitSpec):
    """Return ``((X_R, Y_R), (X_Q, Y_Q))``."""
    coords = as_coords(X)
    Y = as_coords(Y)
    if Y.shape[0] != coords.shape[0]:
        raise InputError(f"X has {coords.shape[0]} rows, Y has {Y.shape[0]}")
    r, q = split_indices(coords.shape[0], spec)
    return (coords[r], Y[r]), (coords[q], Y[q])


def rmse(Y, Y_hat) -> float:
    """Square root of the mean squared row-wise Euclidean error."""
    Y = np.asarray(Y, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    if Y.shape != Y_hat.shape:
        raise InputError(f"shape mismatch: {Y.shape} vs {Y_hat.shape}")
    if Y.ndim == 1:
        Y, Y_hat = Y[:, None], Y_hat[:, None]
    if Y.shape[0] < 1:
        raise InputError("rmse of zero rows")
    return float(np.sqrt(np.mean(np.sum((Y - Y_hat) ** 2, axis=1))))


# -- extenders ----------------------------------------------------------------


def bandwidth_tau(X, policy="knn:5") -> float:
    """Kernel width from the training inputs.

    ``"knn:K"`` is the median over points of the mean distance to the ``K``
    nearest neighbours, ``"median"`` the median pairwise distance, and a
    number is used as is.
    """
    if isinstance(policy, (int, float)):
        tau = float(policy)
    else:
        coords = as_coords(X)
        if policy == "median":
            tau = float(np.median(pdist(coords)))
        elif isinstance(policy, str) and policy.startswith("knn:"):
            k = min(int(policy[4:]), coords.shape[0] - 1)
            D = cdist(coords, coords)
            np.fill_diagonal(D, np.inf)
            tau = float(np.median(np.sort(D, axis=1)[:, :k].mean(axis=1)))
        else:
            raise InputError(f"unknown tau policy {policy!r}")
    if not np.isfinite(tau) or tau <= 0:
        raise InputError(f"kernel width must be positive, got {tau}")
    return tau


@dataclass(frozen=True)
class ExtenderSpec:
    """How to extend an embedding.

    ``kind="gpr"`` with ``loocv=True`` tunes every dimension by LOOCV;
    otherwise a fixed width from ``tau`` and ``noise_var`` is used.
    ``kind="nystrom"`` expands the targets in the eigenbasis of the kernel
    matrix with width from ``tau``.
    """

    kind: str = "gpr"
    loocv: bool = True
    tau: object = "median"
    noise_var: float = 0.0
    grid: GridSpec = BENCH_GRID
    label: str | None = None

    def __post_init__(self):
        if self.kind not in ("gpr", "nystrom"):
            raise InputError(f"unknown extender {self.kind!r}")

    @property
    def name(self) -> str:
        return self.label or self.kind


def extend(X_train, Y_train, X_test, spec: ExtenderSpec) -> np.ndarray:
    X_train = as_coords(X_train)
    Y_train = as_coords(Y_train)
    if spec.kind == "nystrom":
        emb = kernel_embedding(X_train, bandwidth_tau(X_train, spec.tau))
        return nystrom_regress(emb, Y_train, as_coords(X_test))
    if spec.loocv:
        policy = LoocvPolicy(spec.grid)
    else:
        policy = KernelParams(bandwidth_tau(X_train, spec.tau), spec.noise_var)
    model = train(X_train, Y_train, policy)
    return predict_mean(model, X_test)


# -- benchmark ----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n: int = 1000
    seed: int = 0
    noise_sd: float | None = None

    def load(self) -> PointCloud:
        return generate(self.name, self.n, self.seed, self.noise_sd)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    d: int = 2
    k: int = 8
    eps_policy: object = "median-sq"


@dataclass
class Cell:
    rmses: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (seed, message)

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rmses)) if self.rmses else float("nan")

    @property
    def log_mean(self) -> float:
        mean = self.mean
        return math.log(mean) if mean > 0 else float("nan")


@dataclass
class BenchmarkReport:
    cells: dict = field(default_factory=dict)  # (dataset, method, extender, rho) -> Cell
    repeats: int = 0
    base_seed: int = 0

    def per_repeat_rows(self):
        rows = []
        for key in sorted(self.cells):
            cell = self.cells[key]
            for seed, value in zip(cell.seeds, cell.rmses):
                rows.append([*key[:3], format(key[3], ".6g"), str(seed - self.base_seed), value])
        return rows

    def aggregate_rows(self):
        rows = []
        for key in sorted(self.cells):
            cell = self.cells[key]
            rows.append(
                [*key[:3], format(key[3], ".6g"), str(len(cell.rmses)), str(len(cell.failures)),
                 cell.mean, cell.log_mean]
            )
        return rows

    def per_repeat_csv(self) -> str:
        return format_csv(
            self.per_repeat_rows(), ["dataset", "method", "extender", "rho", "repeat", "rmse"]
        )

    def aggregate_csv(self) -> str:
        header = ["dataset", "method", "extender", "rho", "n_ok", "n_failed",
                  "mean_rmse", "log_mean_rmse"]
        return format_csv(self.aggregate_rows(), header)


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def run_benchmark(datasets, methods, extenders, rho_list, repeats: int = 10,
                  base_seed: int = 0) -> BenchmarkReport:
    """Split/extend/score every (dataset, method, extender, rho) cell.

    The learner runs once per (dataset, method) on the full cloud.  Repeat
    ``r`` uses split seed ``base_seed + r``, shared by all extenders, so
    extenders are compared on identical splits.  A failing learner or
    extender is recorded in the cell instead of aborting the run.
    """
    datasets, methods, extenders = _as_list(datasets), _as_list(methods), _as_list(extenders)
    rho_list = [float(r) for r in _as_list(rho_list)]
    if not rho_list:
        raise InputError("rho_list is empty")
    for rho in rho_list:
        SplitSpec(rho)
    if repeats < 1:
        raise InputError(f"repeats must be at least 1, got {repeats}")
    if len({e.name for e in extenders}) != len(extenders):
        raise InputError("extender names must be unique")

    report = BenchmarkReport(repeats=repeats, base_seed=base_seed)
    for ds in datasets:
        cloud = ds.load() if isinstance(ds, DatasetSpec) else ds
        ds_name = ds.name if isinstance(ds, DatasetSpec) else (cloud.name or "data")
        for ms in methods:
            try:
                Y = embed(cloud, ms.name, d=ms.d, k=ms.k, eps_policy=ms.eps_policy).coords
                learner_error = None
            except (InputError, NumericalError, np.linalg.LinAlgError) as exc:
                Y, learner_error = None, f"learner: {exc}"
            for rho in rho_list:
                for r in range(repeats):
                    seed = base_seed + r
                    if Y is not None:
                        try:
                            (Xr, Yr), (Xq, Yq) = split(cloud, Y, SplitSpec(rho, seed))
                        except InputError as exc:
                            split_error = str(exc)
                        else:
                            split_error = None
                    for ext in extenders:
                        cell = report.cells.setdefault((ds_name, ms.name, ext.name, rho), Cell())
                        if Y is None:
                            cell.failures.append((seed, learner_error))
                            continue
                        if split_error:
                            cell.failures.append((seed, split_error))
                            continue
                        try:
                            Y_hat = extend(Xr, Yr, Xq, ext)
                            value = rmse(Yq, Y_hat)
                            if not np.isfinite(value):
                                raise NumericalError("non-finite RMSE")
                        except (InputError, NumericalError, np.linalg.LinAlgError) as exc:
                            cell.failures.append((seed, str(exc)))
                            continue
                        cell.rmses.append(value)
                        cell.seeds.append(seed)
    return report


# -- anomaly scores -----------------------------------------------------------


@dataclass(frozen=True)
class AnomalyScore:
    h: float
    variance_total: float


def anomaly_score(variances) -> AnomalyScore:
    total = float(np.sum(variances))
    return AnomalyScore(h=-total, variance_total=total)


@dataclass(eq=False)
class Heatmap:
    xs: np.ndarray
    ys: np.ndarray
    H: np.ndarray  # H[i, j] at (xs[j], ys[i])
    nodes: np.ndarray  # full-dimensional grid points, row-major over (i, j)
    axes: tuple

    def to_csv(self) -> str:
        rows = []
        for i, y in enumerate(self.ys):
            for j, x in enumerate(self.xs):
                rows.append([x, y, self.H[i, j]])
        return format_csv(rows, ["grid_x", "grid_y", "H"])


def anomaly_heatmap(model: GprModel, bbox, grid_res: int = 40, axes=(0, 1),
                    fixed_dims=None) -> Heatmap:
    """Negative total predictive variance over a 2-D grid of inputs.

    ``bbox`` is ``(min_a, max_a, min_b, max_b)`` for the two varied input
    ``axes``, or a ``(min, max)`` pair for every input dimension.  The other
    input dimensions are pinned at ``fixed_dims`` (a mapping or full-length
    vector) and default to the training mean.
    """
    X = model.train_inputs
    N = X.shape[1]
    if grid_res < 2:
        raise InputError(f"grid_res must be at least 2, got {grid_res}")
    a, b = axes
    if a == b or not (0 <= a < N and 0 <= b < N):
        raise InputError(f"axes {axes} invalid for {N}-dimensional inputs")
    bbox = np.asarray(bbox, dtype=float).ravel()
    if bbox.size == 2 * N and N != 2:
        lo_a, hi_a, lo_b, hi_b = bbox[2 * a], bbox[2 * a + 1], bbox[2 * b], bbox[2 * b + 1]
    elif bbox.size == 4:
        lo_a, hi_a, lo_b, hi_b = bbox
    else:
        raise InputError(f"bbox needs 4 or {2 * N} values, got {bbox.size}")
    if not (lo_a < hi_a and lo_b < hi_b):
        raise InputError("bbox bounds must satisfy min < max on each axis")
    pinned = X.mean(axis=0)
    if fixed_dims is not None:
        if isinstance(fixed_dims, dict):
            for dim, value in fixed_dims.items():
                pinned[int(dim)] = float(value)
        else:
            fixed_dims = np.asarray(fixed_dims, dtype=float)
            if fixed_dims.shape != (N,):
                raise InputError(f"fixed_dims needs {N} values")
            pinned = fixed_dims.copy()
    xs = np.linspace(lo_a, hi_a, grid_res)
    ys = np.linspace(lo_b, hi_b, grid_res)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.tile(pinned, (gx.size, 1))
    nodes[:, a] = gx.ravel()
    nodes[:, b] = gy.ravel()
    _, variances = predict_batch(model, nodes)
    H = -variances.sum(axis=1).reshape(gx.shape)
    return Heatmap(xs, ys, H, nodes, (a, b))


# -- threshold detector -------------------------------------------------------


def _accuracy(totals, is_anomaly, threshold) -> float:
    return float(np.mean((totals > threshold) == is_anomaly))


def threshold_candidates(totals) -> np.ndarray:
    """Midpoints between consecutive distinct values, bracketed by -inf and +inf."""
    v = np.unique(np.asarray(totals, dtype=float))
    mids = 0.5 * (v[:-1] + v[1:])
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _as_anomaly_flags(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind in "US":
        return labels == ANOMALY
    return labels.astype(int) != 0


def learn_threshold(variance_totals, labels, holdout_frac: float = 0.2, seed: int = 0) -> float:
    """Variance threshold maximizing accuracy of ``total > threshold => anomaly``.

    A random ``holdout_frac`` of the instances is scored; ties between
    candidate thresholds go to the smallest.  Labels are truthy for
    anomalies (or the strings ``"anomaly"``/``"normal"``).
    """
    totals = np.asarray(variance_totals, dtype=float).ravel()
    flags = _as_anomaly_flags(labels).ravel()
    if totals.size == 0:
        raise InputError("learn_threshold needs at least one instance")
    if flags.shape != totals.shape:
        raise InputError("labels must be aligned with variance totals")
    if not 0 < holdout_frac <= 1:
        raise InputError(f"holdout_frac must lie in (0, 1], got {holdout_frac}")
    n_hold = max(1, int(math.floor(holdout_frac * totals.size + 0.5)))
    idx = np.sort(np.random.default_rng(seed).permutation(totals.size)[:n_hold])
    hold, hold_flags = totals[idx], flags[idx]
    if hold_flags.all() or not hold_flags.any():
        only_anomalies = bool(hold_flags.all())
        warnings.warn(
            "holdout contains a single class; falling back to a trivial threshold",
            RuntimeWarning,
            stacklevel=2,
        )
        return -np.inf if only_anomalies else np.inf
    cands = threshold_candidates(hold)
    # accuracy at each candidate from sorted cumulative counts
    order = np.argsort(hold, kind="stable")
    v, f = hold[order], hold_flags[order]
    below = np.searchsorted(v, cands, side="right")  # instances predicted normal
    normals_below = np.concatenate([[0], np.cumsum(~f)])[below]
    anomalies_above = f.sum() - np.concatenate([[0], np.cumsum(f)])[below]
    acc = (normals_below + anomalies_above) / v.size
    return float(cands[int(np.argmax(acc))])


def classify(model: GprModel, x_star, threshold: float) -> str:
    """``"anomaly"`` iff the total predictive variance exceeds ``threshold``."""
    _, variances = predict_batch(model, np.atleast_2d(np.asarray(x_star, dtype=float)))
    return ANOMALY if variances.sum() > threshold else NORMAL


def classify_batch(model: GprModel, X_star, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Total variances and anomaly flags for a matrix of points."""
    _, variances = predict_batch(model, X_star)
    totals = variances.sum(axis=1)
    return totals, totals > threshold


@dataclass(eq=False)
class AnomalyDetector:
    scaler: object
    model: GprModel
    threshold: float
    holdout_accuracy: float
    embedding_params: dict

    def score(self, X) -> tuple[np.ndarray, np.ndarray]:
        return classify_batch(self.model, apply_minmax(self.scaler, as_coords(X)), self.threshold)


def fit_anomaly_detector(X, labels, d: int = 2, eps_policy="knn:5", holdout_frac: float = 0.2,
                         seed: int = 0, hyper_policy=None) -> AnomalyDetector:
    """Scale, embed, extend and threshold in one go.

    Inputs are min-max scaled with factors fitted on the whole training set.
    ``holdout_frac`` of the rows are held out; the diffusion map and the GPR
    are fitted on the normal rows of the remainder, and the threshold is
    chosen on the held-out rows' total predictive variance.
    """
    coords = as_coords(X)
    flags = _as_anomaly_flags(labels)
    if flags.shape != (coords.shape[0],):
        raise InputError("labels must be aligned with the rows")
    scaler = fit_minmax(coords)
    scaled = apply_minmax(scaler, coords)
    n_hold = max(1, int(math.floor(holdout_frac * coords.shape[0] + 0.5)))
    perm = np.random.default_rng(seed).permutation(coords.shape[0])
    hold = np.sort(perm[:n_hold])
    fit = np.sort(perm[n_hold:])
    fit = fit[~flags[fit]]
    if fit.size < d + 2:
        raise InputError(f"only {fit.size} normal rows left to fit the embedding")
    emb = embed(scaled[fit], "dm", d=d, eps_policy=eps_policy)
    policy = hyper_policy if hyper_policy is not None else LoocvPolicy(BENCH_GRID)
    model = train(scaled[fit], emb.coords, policy)
    totals, _ = classify_batch(model, scaled[hold], 0.0)
    threshold = learn_threshold(totals, flags[hold], holdout_frac=1.0, seed=seed)
    accuracy = _accuracy(totals, flags[hold], threshold)
    return AnomalyDetector(scaler, model, threshold, accuracy, emb.params_used)
