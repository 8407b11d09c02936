"""Per-dimension Gaussian process regression for out-of-sample extension.

Each embedding dimension ``j`` gets an independent regressor holding
``A = (K + noise_var I)^-1`` and ``w = A y_j``.  A test point then gets

    mean = k_* . w
    var  = 1 - k_* A k_*^T

where ``k_*`` is the cross-kernel row; the prior variance is 1 because the
kernel has unit diagonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from gpoose.errors import InputError, NumericalError
from gpoose.kernel import JITTER_PER_POINT, KernelParams, as_coords, cross_kernel, kernel_matrix

# Pre-clamp variance below this magnitude is treated as rounding noise.
VARIANCE_TOL = 1e-8


def spd_inverse(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and lower Cholesky factor of a symmetric positive definite matrix.

    Raises ``np.linalg.LinAlgError`` when the factorization fails.
    """
    c, lower = linalg.cho_factor(M, lower=True, check_finite=False)
    A = linalg.cho_solve((c, lower), np.eye(M.shape[0]), check_finite=False)
    return 0.5 * (A + A.T), np.tril(c)


def factorized_inverse(K: np.ndarray, noise_var: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``((K + noise_var I)^-1, L, jitter)`` with ``L`` the Cholesky factor.

    A noise-free matrix is factorized as is; only if that fails is a jitter of
    ``1e-10 * m`` added to the diagonal.
    """
    m = K.shape[0]
    M = K + noise_var * np.eye(m)
    try:
        return (*spd_inverse(M), 0.0)
    except np.linalg.LinAlgError:
        if noise_var > 0:
            cond = np.linalg.cond(M)
            raise NumericalError(
                f"kernel matrix factorization failed (condition estimate {cond:.3e})"
            ) from None
    jitter = JITTER_PER_POINT * m
    try:
        return (*spd_inverse(M + jitter * np.eye(m)), jitter)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(M)
        raise NumericalError(
            f"noise-free kernel matrix is singular even with jitter {jitter:.1e} "
            f"(condition estimate {cond:.3e})"
        ) from None


def refactor(train_inputs: np.ndarray, params: KernelParams, jitter: float) -> np.ndarray:
    """Cholesky factor of a stored model's ``A^-1``, rebuilt exactly as in training."""
    m = train_inputs.shape[0]
    M = kernel_matrix(train_inputs, params.tau) + params.noise_var * np.eye(m)
    if jitter:
        M = M + jitter * np.eye(m)
    return np.tril(linalg.cho_factor(M, lower=True, check_finite=False)[0])


@dataclass(frozen=True, eq=False)
class GprDimModel:
    """Trained regressor for one target dimension.

    ``chol`` is the lower Cholesky factor of ``A^-1``.  Variances are
    computed as ``1 - ||chol^-1 k_*||^2``, which stays accurate when a tiny
    noise variance makes the entries of ``A`` huge; without it the explicit
    ``1 - k_* A k_*^T`` is used.
    """

    A: np.ndarray
    w: np.ndarray
    params: KernelParams
    train_inputs: np.ndarray
    offset: float = 0.0
    jitter: float = 0.0
    chol: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.train_inputs.shape[0]


@dataclass(frozen=True, eq=False)
class GprModel:
    """One :class:`GprDimModel` per embedding dimension, sharing training inputs."""

    dims: tuple
    reports: tuple = field(default=())

    def __post_init__(self):
        if len(self.dims) < 1:
            raise InputError("a GprModel needs at least one dimension")
        X0 = self.dims[0].train_inputs
        for dm in self.dims[1:]:
            if dm.train_inputs is not X0 and not np.array_equal(dm.train_inputs, X0):
                raise InputError("all dimensions must share the same training inputs")

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def train_inputs(self) -> np.ndarray:
        return self.dims[0].train_inputs


@dataclass(frozen=True)
class PredictiveResult:
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class LoocvPolicy:
    """Tune each dimension's hyperparameters by leave-one-out CV.

    The kernel has unit prior variance, so with ``normalize_targets`` the
    search runs on targets divided by their root mean square.  The model is
    then trained on the raw targets: the predictive mean is that of a GP
    whose prior amplitude matches the data, and variances stay in units of
    the unit-amplitude prior.
    """

    grid: object = None  # hyperopt.GridSpec; None selects the default grid
    normalize_targets: bool = True


def target_scale(y: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(np.square(y))))
    return rms if rms > 0 else 1.0


def train_dim(X, y, params: KernelParams, center: bool = False) -> GprDimModel:
    coords = as_coords(X)
    y = np.asarray(y, dtype=float).ravel()
    m = coords.shape[0]
    if m < 1:
        raise InputError("train_dim needs at least one training point")
    if y.shape[0] != m:
        raise InputError(f"{y.shape[0]} targets for {m} training points")
    if not np.all(np.isfinite(y)):
        raise InputError("targets must be finite")
    offset = float(y.mean()) if center else 0.0
    K = kernel_matrix(coords, params.tau)
    A, L, jitter = factorized_inverse(K, params.noise_var)
    w = A @ (y - offset)
    return GprDimModel(
        A=A, w=w, params=params, train_inputs=coords, offset=offset, jitter=jitter, chol=L
    )


def _check_point(model: GprDimModel, x_star) -> np.ndarray:
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if x_star.shape != (model.train_inputs.shape[1],):
        raise InputError(
            f"test point has shape {x_star.shape}, model expects "
            f"({model.train_inputs.shape[1]},)"
        )
    return x_star


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    low = var < 0
    if np.any(var < -VARIANCE_TOL):
        warnings.warn(
            f"{int(low.sum())} predicted variance(s) clamped to 0, most negative "
            f"{var.min():.3e}; the kernel matrix is likely ill-conditioned",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.clip(var, 0.0, 1.0)


def _explained(model: GprDimModel, Ks: np.ndarray) -> np.ndarray:
    """``k A k^T`` for each row of ``Ks``."""
    if model.chol is not None:
        V = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
        return np.einsum("ij,ij->j", V, V)
    return np.einsum("ij,ij->i", Ks @ model.A, Ks)


def predict_dim(model: GprDimModel, x_star) -> tuple[float, float]:
    x_star = _check_point(model, x_star)
    k = cross_kernel(x_star, model.train_inputs, model.params.tau)
    mu = float(k @ model.w) + model.offset
    var = _clamp_variance(1.0 - _explained(model, k[None, :]))[0]
    return mu, float(var)


def train(X, Y, hyper_policy, center: bool = False) -> GprModel:
    """Train one regressor per column of the embedding ``Y``.

    ``hyper_policy`` is either a :class:`KernelParams` shared by all
    dimensions or a :class:`LoocvPolicy`, in which case every dimension is
    tuned separately.
    """
    from gpoose.hyperopt import optimize

    coords = as_coords(X)
    Y = np.asarray(getattr(Y, "coords", Y), dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != coords.shape[0]:
        raise InputError(f"embedding has {Y.shape[0]} rows, point cloud has {coords.shape[0]}")
    if Y.shape[1] < 1:
        raise InputError("embedding must have at least one dimension")

    dims, reports = [], []
    for j in range(Y.shape[1]):
        try:
            if isinstance(hyper_policy, LoocvPolicy):
                scale = target_scale(Y[:, j]) if hyper_policy.normalize_targets else 1.0
                report = optimize(coords, Y[:, j] / scale, hyper_policy.grid)
                reports.append(report)
                params = report.best_params
            elif isinstance(hyper_policy, KernelParams):
                params = hyper_policy
            else:
                raise InputError(f"unknown hyperparameter policy {hyper_policy!r}")
            dims.append(train_dim(coords, Y[:, j], params, center=center))
        except NumericalError as exc:
            raise NumericalError(f"dimension {j}: {exc}") from exc
    return GprModel(dims=tuple(dims), reports=tuple(reports))


def predict(model: GprModel, x_star) -> PredictiveResult:
    out = [predict_dim(dm, x_star) for dm in model.dims]
    return PredictiveResult(
        mean=np.array([mu for mu, _ in out]), variance=np.array([v for _, v in out])
    )


def _as_test_matrix(model: GprModel, X_star) -> np.ndarray:
    Xs = as_coords(X_star)
    N = model.train_inputs.shape[1]
    if Xs.shape[1] != N and Xs.size == N:
        Xs = Xs.reshape(1, N)
    if Xs.shape[1] != N:
        raise InputError(f"test points have {Xs.shape[1]} coordinates, model expects {N}")
    return Xs


def predict_mean(model: GprModel, X_star) -> np.ndarray:
    """Means only, ``n x d``; skips the quadratic-cost variance."""
    Xs = _as_test_matrix(model, X_star)
    out = np.empty((Xs.shape[0], model.d))
    cache = {}
    for j, dm in enumerate(model.dims):
        tau = dm.params.tau
        if tau not in cache:
            cache[tau] = cross_kernel(Xs, dm.train_inputs, tau)
        out[:, j] = cache[tau] @ dm.w + dm.offset
    return out


def predict_batch(model: GprModel, X_star) -> tuple[np.ndarray, np.ndarray]:
    """Means and variances for a matrix of test points, each ``n x d``."""
    Xs = _as_test_matrix(model, X_star)
    means = np.empty((Xs.shape[0], model.d))
    variances = np.empty_like(means)
    for j, dm in enumerate(model.dims):
        Ks = cross_kernel(Xs, dm.train_inputs, dm.params.tau)
        means[:, j] = Ks @ dm.w + dm.offset
        variances[:, j] = _clamp_variance(1.0 - _explained(dm, Ks))
    return means, variances
