"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected in
the terminal summary) before asserting.  Run alone with
``pytest tests/test_acceptance.py -s``.
"""

import warnings

import numpy as np
import pytest
from scipy.linalg import orthogonal_procrustes
from scipy.spatial.distance import cdist

from conftest import ACCEPTANCE_LINES
from gpoose import KernelParams, train
from gpoose.bench import (
    DatasetSpec,
    ExtenderSpec,
    MethodSpec,
    SplitSpec,
    anomaly_heatmap,
    extend,
    fit_anomaly_detector,
    learn_threshold,
    rmse,
    run_benchmark,
    split,
)
from gpoose.data import generate
from gpoose.gpr import LoocvPolicy, predict_batch
from gpoose.hyperopt import loocv_gradient, loocv_objective
from gpoose.kernel import kernel_matrix
from gpoose.manifold import classical_mds, embed, geodesic_distances, markov_matrix
from gpoose.spectral import eigendecompose, equivalence_residual
from oracles import brute_force_loocv, sweep_oracle

# Relative-error ceilings for the Swiss roll extension at rho = 0.1, frozen
# from an oracle run before the suite was written (seed-0 split measured
# dm 1.2e-4, le 0.20, isomap 0.17, mds 7.7e-6; spread over five splits
# reached 1.2e-4, 0.20, 0.22, 1.7e-5).
RELATIVE_ERROR_CEILINGS = {"dm": 2.5e-4, "le": 0.3, "isomap": 0.3, "mds": 3e-5}


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


def relative_error(Y, Y_hat):
    return rmse(Y, Y_hat) / float(np.sqrt(np.mean(np.sum(Y**2, axis=1))))


def test_criterion_1_nystrom_equals_noise_free_gpr():
    worst = 0.0
    for seed in range(10):
        X = np.random.default_rng(seed).uniform(0, 1, (50, 3))
        worst = max(worst, equivalence_residual(X, 0.3, 20, seed=seed))
    assert record(1, worst <= 1e-8, f"max |nystrom - gpr| = {worst:.2e} (tol 1e-8)")


def test_criterion_2_loocv_closed_form_and_gradient():
    worst_obj, worst_grad = 0.0, 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 31))
        X = rng.uniform(0, 1, (m, int(rng.integers(1, 4))))
        y = np.sin(3 * X).sum(axis=1) + 0.1 * rng.standard_normal(m)
        p = KernelParams(float(np.exp(rng.uniform(np.log(0.1), np.log(2.0)))),
                         float(np.exp(rng.uniform(np.log(1e-3), 0.0))))
        want = brute_force_loocv(X, y, p.tau, p.noise_var)
        worst_obj = max(worst_obj, abs(loocv_objective(X, y, p) - want) / max(1.0, abs(want)))
        g = np.array(loocv_gradient(X, y, p))
        fd = np.empty(2)
        for j in range(2):
            up, down = p.log_params.copy(), p.log_params.copy()
            up[j] += 1e-5
            down[j] -= 1e-5
            fd[j] = (loocv_objective(X, y, KernelParams.from_log(up))
                     - loocv_objective(X, y, KernelParams.from_log(down))) / 2e-5
        worst_grad = max(worst_grad, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-3))
    ok = worst_obj <= 1e-10 and worst_grad <= 1e-4
    assert record(2, ok, f"closed form vs retraining {worst_obj:.1e} (tol 1e-10), "
                         f"gradient vs finite differences {worst_grad:.1e} (tol 1e-4)")


def test_criterion_3_swiss_roll_extension_at_low_rho():
    X = generate("swiss_roll", 1000, 0)
    errors = {}
    for method in ("dm", "le", "isomap", "mds"):
        Y = embed(X, method).coords
        (Xr, Yr), (Xq, Yq) = split(X, Y, SplitSpec(0.1, 0))
        errors[method] = relative_error(Yq, extend(Xr, Yr, Xq, ExtenderSpec()))
    ok = all(errors[m] <= RELATIVE_ERROR_CEILINGS[m] for m in errors)
    detail = ", ".join(f"{m} {errors[m]:.2e}<={RELATIVE_ERROR_CEILINGS[m]:.0e}" for m in errors)
    assert record(3, ok, f"relative error {detail}")


@pytest.fixture(scope="module")
def rho_sweep():
    datasets = [DatasetSpec("swiss_roll"), DatasetSpec("toroidal_helix")]
    methods = [MethodSpec("dm"), MethodSpec("isomap")]
    extenders = [ExtenderSpec("gpr"), ExtenderSpec("nystrom")]
    return run_benchmark(datasets, methods, extenders, [0.05, 0.1, 0.8], repeats=10)


@pytest.mark.slow
def test_criterion_4_error_decreases_with_rho(rho_sweep):
    parts, ok = [], True
    for ds in ("swiss_roll", "toroidal_helix"):
        for method in ("dm", "isomap"):
            for ext in ("gpr", "nystrom"):
                low = rho_sweep.cells[(ds, method, ext, 0.05)]
                high = rho_sweep.cells[(ds, method, ext, 0.8)]
                cell_ok = (len(low.rmses) == len(high.rmses) == 10
                           and high.mean < low.mean)
                ok &= cell_ok
                parts.append(f"{ds}/{method}/{ext} {low.mean:.3g}->{high.mean:.3g}")
    assert record(4, ok, "mean rmse rho 0.05->0.8: " + "; ".join(parts))


@pytest.mark.slow
def test_criterion_5_gpr_beats_nystrom_in_most_cells(rho_sweep):
    wins, parts = 0, []
    pairs = [(ds, m) for ds in ("swiss_roll", "toroidal_helix") for m in ("dm", "isomap")]
    for ds, method in pairs:
        g = rho_sweep.cells[(ds, method, "gpr", 0.1)].mean
        n = rho_sweep.cells[(ds, method, "nystrom", 0.1)].mean
        wins += g <= n
        parts.append(f"{ds}/{method} gpr {g:.3g} vs nystrom {n:.3g}")
    ok = wins / len(pairs) >= 0.6
    assert record(5, ok, f"gpr <= nystrom in {wins}/{len(pairs)} cells at rho 0.1: "
                         + "; ".join(parts))


def test_criterion_6_heatmap_contrast():
    parts, ok = [], True
    cases = [(name, axes, method)
             for name, axes in (("swiss_roll", (0, 2)), ("toroidal_helix", (0, 1)))
             for method in ("dm", "isomap")]
    for name, axes, method in cases:
        X = generate(name, 500, 0)
        model = train(X, embed(X, method).coords, LoocvPolicy())
        lo, hi = X.coords.min(axis=0), X.coords.max(axis=0)
        hm = anomaly_heatmap(model, np.c_[lo, hi].ravel(), 40, axes)
        tau = min(dm.params.tau for dm in model.dims)
        near = cdist(hm.nodes, X.coords).min(axis=1) <= 0.5 * tau
        near_h = hm.H.ravel()[near].mean() if near.any() else -np.inf
        corner_h = np.mean([hm.H[0, 0], hm.H[0, -1], hm.H[-1, 0], hm.H[-1, -1]])
        cell_ok = bool(near.any() and near_h > corner_h and np.all(hm.H <= 0))
        ok &= cell_ok
        parts.append(f"{name}/{method} near {near_h:.3g} vs corners {corner_h:.3g} "
                     f"({int(near.sum())} near nodes, max H {hm.H.max():.1e})")
    assert record(6, ok, "; ".join(parts))


def test_criterion_7_variance_threshold_detector():
    rng = np.random.default_rng(0)
    normal = generate("twin_peaks", 400, 0).coords
    anom = rng.uniform(-1, 1, (40, 3))
    anom[:, 2] = rng.choice([-1, 1], 40) * rng.uniform(2.0, 3.0, 40)
    X = np.vstack([normal, anom])
    labels = np.r_[np.zeros(400, int), np.ones(40, int)]
    det = fit_anomaly_detector(X, labels, seed=0)
    mismatches = 0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        n = int(r.integers(4, 40))
        flags = r.random(n) < 0.4
        flags[:2] = [True, False]
        totals = np.round(r.normal(0.5 + 0.3 * flags, 0.25), 2)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            got = learn_threshold(totals, flags, holdout_frac=1.0)
        mismatches += got != sweep_oracle(totals, flags)[0]
    ok = det.holdout_accuracy == 1.0 and mismatches == 0
    assert record(7, ok, f"holdout accuracy {det.holdout_accuracy:.3f}, "
                         f"threshold mismatches vs sweep {mismatches}/100")


def _invariants():
    rng = np.random.default_rng(42)
    failures = []

    X = rng.uniform(0, 1, (40, 3))
    K = kernel_matrix(X, 0.4)
    if not (np.all((K >= 0) & (K <= 1)) and np.array_equal(K, K.T)):
        failures.append("kernel bounds/symmetry")
    try:
        np.linalg.cholesky(K + 1e-10 * 40 * np.eye(40))
    except np.linalg.LinAlgError:
        failures.append("kernel PSD with jitter")

    Y = rng.standard_normal((40, 2))
    model = train(X, Y, KernelParams(0.4, 0.0))
    mu, var = predict_batch(model, X)
    if np.max(np.abs(mu - Y)) > 1e-8 or var.max() > 1e-8:
        failures.append("gpr interpolation")
    _, var = predict_batch(train(X, Y, KernelParams(0.3, 1e-3)), rng.uniform(-1, 2, (200, 3)))
    if not np.all((var >= 0) & (var <= 1)):
        failures.append("gpr variance bounds")

    A = rng.standard_normal((20, 20))
    vals, vecs = eigendecompose(A + A.T)
    top = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(20)]
    if (np.max(np.abs(A + A.T - vecs @ np.diag(vals) @ vecs.T)) > 1e-8
            or np.max(np.abs(vecs.T @ vecs - np.eye(20))) > 1e-10 or np.any(top <= 0)):
        failures.append("eigendecomposition")

    roll = generate("swiss_roll", 400, 1)
    P = markov_matrix(roll, 50.0)
    if np.max(np.abs(P.sum(axis=1) - 1)) > 1e-10:
        failures.append("diffusion-map stochasticity")
    G = geodesic_distances(roll, 8)
    if np.any(G < cdist(roll.coords, roll.coords) - 1e-10):
        failures.append("isomap geodesic >= euclidean")

    Z = rng.standard_normal((25, 3))
    emb = classical_mds(cdist(Z, Z), 3).coords
    R, _ = orthogonal_procrustes(emb, Z - Z.mean(axis=0))
    if np.max(np.abs(emb @ R - (Z - Z.mean(axis=0)))) > 1e-6:
        failures.append("mds procrustes")

    if rmse([[0.0, 0.0]], [[3.0, 4.0]]) != 5.0 or rmse(Y, Y) != 0.0:
        failures.append("rmse identities")

    args = (DatasetSpec("swiss_roll", n=150), [MethodSpec("dm"), MethodSpec("isomap")],
            [ExtenderSpec(), ExtenderSpec("nystrom")], [0.2, 0.6])
    a, b = run_benchmark(*args, repeats=2), run_benchmark(*args, repeats=2)
    if a.per_repeat_csv() != b.per_repeat_csv() or a.aggregate_csv() != b.aggregate_csv():
        failures.append("benchmark determinism")
    return failures


def test_criterion_8_invariant_suites():
    failures = _invariants()
    detail = "all invariant checks hold" if not failures else "failed: " + ", ".join(failures)
    assert record(8, not failures, detail + " (full property suites in the other test modules)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
