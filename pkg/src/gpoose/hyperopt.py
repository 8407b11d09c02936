"""Leave-one-out cross-validation for GPR hyperparameters.

With ``B = (K + noise_var I)^-1`` and ``alpha = B y`` the leave-one-out
predictive distribution of target ``i`` has mean ``y_i - alpha_i / B_ii`` and
variance ``1 / B_ii``.  The objective is the sum of the held-out Gaussian log
densities and is maximized over ``theta = (log tau, log noise_var)`` with
Polak-Ribiere conjugate gradients from a grid of starting points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import pdist

from gpoose.errors import InputError, NumericalError
from gpoose.kernel import KernelParams, as_coords, kernel_matrix, sq_distances

MAX_CONDITION = 1e12
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GridSpec:
    """Starting points for the optimizer.

    ``tau_factors`` multiply the median pairwise distance and
    ``noise_factors`` multiply the target variance.  ``points`` overrides the
    grid with explicit ``(tau, noise_var)`` pairs.  ``n_starts`` limits the
    conjugate-gradient runs to the best-scoring grid points (``None`` runs
    from all of them).
    """

    tau_factors: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    noise_factors: tuple = (1e-4, 1e-2, 1e-1)
    points: tuple | None = None
    n_starts: int | None = None
    max_iter: int = 100
    grad_tol: float = 1e-6
    f_tol: float = 1e-10
    armijo: float = 1e-4

    def initial_points(self, X: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
        if self.points is not None:
            return [KernelParams(float(t), float(s)).log_params for t, s in self.points]
        dists = pdist(X)
        scale = float(np.median(dists)) if dists.size else 1.0
        if scale <= 0:
            scale = float(dists.max()) if dists.size and dists.max() > 0 else 1.0
        var = float(np.var(y))
        if var <= 0:
            var = 1.0
        return [
            np.log([scale * t, var * s]) for t in self.tau_factors for s in self.noise_factors
        ]


@dataclass
class HyperOptReport:
    best_params: KernelParams
    best_objective: float
    trace: list = field(default_factory=list)  # (restart, iteration, objective)
    restarts_used: int = 0
    init_objectives: list = field(default_factory=list)
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "best_params": {"tau": self.best_params.tau, "noise_var": self.best_params.noise_var},
            "best_objective": self.best_objective,
            "restarts_used": self.restarts_used,
            "init_objectives": list(self.init_objectives),
            "trace": [list(t) for t in self.trace],
            "warning": self.warning,
        }


def _validate(X, y):
    coords = as_coords(X)
    y = np.asarray(y, dtype=float).ravel()
    if coords.shape[0] < 2:
        raise InputError("leave-one-out needs at least two training points")
    if y.shape[0] != coords.shape[0]:
        raise InputError(f"{y.shape[0]} targets for {coords.shape[0]} points")
    return coords, y


def _factor(K: np.ndarray):
    """Cholesky factor and inverse of ``K``; ``None`` when infeasible."""
    c, info = lapack.dpotrf(K, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        return None
    anorm = np.abs(K).sum(axis=0).max()
    rcond, info = lapack.dpocon(c, anorm, uplo="L")
    if info != 0 or rcond * MAX_CONDITION < 1.0:
        return None
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        return None
    inv = np.tril(inv) + np.tril(inv, -1).T
    return inv


def _sq_dists(coords):
    D2 = sq_distances(coords, coords)
    np.fill_diagonal(D2, 0.0)
    return np.triu(D2) + np.triu(D2, 1).T


def _evaluate(D2, y, theta, with_grad: bool):
    """Objective (and gradient) at ``theta``; objective is ``-inf`` if infeasible.

    ``D2`` holds the pairwise squared distances of the training inputs.
    """
    tau, noise = np.exp(theta[0]), np.exp(theta[1])
    if not (np.isfinite(tau) and np.isfinite(noise)) or tau <= 0 or noise <= 0:
        return -np.inf, None
    scaled = D2 / tau**2
    K0 = np.exp(-scaled)
    K = K0.copy()
    K[np.diag_indices_from(K)] += noise
    B = _factor(K)
    if B is None:
        return -np.inf, None
    alpha = B @ y
    b = np.diag(B)
    if np.any(b <= 0):
        return -np.inf, None
    obj = float(np.sum(0.5 * np.log(b) - 0.5 * alpha**2 / b - 0.5 * LOG_2PI))
    if not np.isfinite(obj):
        return -np.inf, None
    if not with_grad:
        return obj, None

    def component(Z_alpha, diag_ZB):
        return np.sum((alpha * Z_alpha - 0.5 * (1.0 + alpha**2 / b) * diag_ZB) / b)

    dK = 2.0 * scaled * K0
    BdK = B @ dK
    g_tau = component(BdK @ alpha, np.einsum("ij,ji->i", BdK, B))
    g_noise = component(noise * (B @ alpha), noise * np.einsum("ij,ij->i", B, B))
    return obj, np.array([g_tau, g_noise])


def loocv_objective(X, y, params: KernelParams) -> float:
    """Sum of leave-one-out log predictive densities (nats); larger is better."""
    coords, y = _validate(X, y)
    K = kernel_matrix(coords, params.tau)
    K[np.diag_indices_from(K)] += params.noise_var
    try:
        c, info = lapack.dpotrf(K, lower=1, clean=1)
        if info != 0:
            raise np.linalg.LinAlgError
        B, info = lapack.dpotri(c, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"LOOCV: kernel matrix not positive definite at tau={params.tau:.6g}, "
            f"noise_var={params.noise_var:.6g}"
        ) from None
    B = np.tril(B) + np.tril(B, -1).T
    alpha = B @ y
    b = np.diag(B)
    obj = float(np.sum(0.5 * np.log(b) - 0.5 * alpha**2 / b - 0.5 * LOG_2PI))
    if not np.isfinite(obj):
        raise NumericalError("LOOCV objective is not finite (degenerate conditioning)")
    return obj


def loocv_gradient(X, y, params: KernelParams) -> tuple[float, float]:
    """Gradient of :func:`loocv_objective` with respect to ``(log tau, log noise_var)``."""
    coords, y = _validate(X, y)
    if params.noise_var <= 0:
        raise InputError("the log-noise gradient needs noise_var > 0")
    obj, grad = _evaluate(_sq_dists(coords), y, params.log_params, with_grad=True)
    if grad is None:
        raise NumericalError(
            f"LOOCV gradient undefined at tau={params.tau:.6g}, noise_var={params.noise_var:.6g}"
        )
    return float(grad[0]), float(grad[1])


# Largest move in log-parameter space per line search.
MAX_STEP = 4.0


def _line_search(D2, y, theta, f, g, direction, c1, step0):
    """Armijo backtracking from ``step0``; expands while the first trial keeps improving."""
    slope = float(g @ direction)
    norm = float(np.linalg.norm(direction))
    if norm == 0:
        return None, None, 0.0
    max_step = MAX_STEP / norm
    step = min(step0, max_step)
    for _ in range(40):
        trial = theta + step * direction
        f_new, _ = _evaluate(D2, y, trial, with_grad=False)
        if np.isfinite(f_new) and f_new >= f + c1 * step * slope:
            break
        step *= 0.5
    else:
        return None, None, 0.0
    if step >= step0 or step0 >= max_step:
        while 2 * step <= max_step:
            f_big, _ = _evaluate(D2, y, theta + 2 * step * direction, with_grad=False)
            if not (np.isfinite(f_big) and f_big > f_new):
                break
            step *= 2
            f_new = f_big
        trial = theta + step * direction
    return trial, f_new, step


def _cg_ascent(D2, y, theta, f, spec: GridSpec, restart: int, trace: list):
    _, g = _evaluate(D2, y, theta, with_grad=True)
    direction = g.copy()
    step0 = 1.0 / max(float(np.linalg.norm(g)), 1.0)
    accepted = 0
    for it in range(spec.max_iter):
        if np.linalg.norm(g) <= spec.grad_tol:
            break
        if g @ direction <= 0:
            direction = g.copy()
        new_theta, f_new, step = _line_search(D2, y, theta, f, g, direction, spec.armijo, step0)
        if new_theta is None and not np.array_equal(direction, g):
            direction = g.copy()
            new_theta, f_new, step = _line_search(
                D2, y, theta, f, g, direction, spec.armijo, step0
            )
        if new_theta is None:
            break
        _, g_new = _evaluate(D2, y, new_theta, with_grad=True)
        if g_new is None:
            break
        slope = float(g @ direction)
        beta = max(0.0, float(g_new @ (g_new - g)) / float(g @ g))
        direction = g_new + beta * direction
        # next trial step assumes the same first-order gain as this one
        new_slope = float(g_new @ direction)
        step0 = step * slope / new_slope if new_slope > 0 else step
        gain = f_new - f
        theta, f, g = new_theta, f_new, g_new
        accepted += 1
        trace.append((restart, it + 1, f))
        if gain < spec.f_tol * (1.0 + abs(f)):
            break
    return theta, f, g, accepted


def optimize(X, y, init_policy: GridSpec | None = None) -> HyperOptReport:
    """Maximize the LOOCV objective; deterministic for a fixed grid."""
    coords, y = _validate(X, y)
    spec = init_policy or GridSpec()
    starts = spec.initial_points(coords, y)
    if not starts:
        raise InputError("empty initialization grid")
    D2 = _sq_dists(coords)
    init_obj = [_evaluate(D2, y, th, with_grad=False)[0] for th in starts]
    feasible = [i for i in range(len(starts)) if np.isfinite(init_obj[i])]
    if not feasible:
        raise NumericalError("LOOCV objective is infeasible at every grid point")
    # stable sort keeps the lowest grid index first among ties
    order = sorted(feasible, key=lambda i: -init_obj[i])
    if spec.n_starts is not None:
        order = order[: max(1, spec.n_starts)]

    trace = []
    best_theta, best_f = None, -np.inf
    best_idx = None
    any_progress = False
    for i in order:
        trace.append((i, 0, init_obj[i]))
        theta, f, g, accepted = _cg_ascent(D2, y, starts[i].copy(), init_obj[i], spec, i, trace)
        if accepted or (g is not None and np.linalg.norm(g) <= spec.grad_tol):
            any_progress = True
        if f > best_f or (f == best_f and i < best_idx):
            best_theta, best_f, best_idx = theta, f, i
    report = HyperOptReport(
        best_params=KernelParams.from_log(best_theta),
        best_objective=float(best_f),
        trace=trace,
        restarts_used=len(order),
        init_objectives=[float(v) for v in init_obj],
    )
    if not any_progress:
        report.warning = "line search failed from every start; returning best grid point"
    return report
