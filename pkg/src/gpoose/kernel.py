"""Squared-exponential covariance and its derivatives.

The kernel is ``k(x, x') = exp(-||x - x'||^2 / tau^2)``: there is no factor
1/2 in the exponent and no signal amplitude, so ``k(x, x) = 1`` always.
Hyperparameters are handled in log-space by the optimizer; the derivative
returned here is with respect to ``log tau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from gpoose.errors import InputError

# Diagonal jitter per training point, used only when a noise-free kernel
# matrix fails to factorize.
JITTER_PER_POINT = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """Kernel width ``tau`` and observation noise variance ``noise_var``."""

    tau: float
    noise_var: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise InputError(f"tau must be positive and finite, got {self.tau!r}")
        if not np.isfinite(self.noise_var) or self.noise_var < 0:
            raise InputError(f"noise_var must be non-negative, got {self.noise_var!r}")

    @property
    def log_params(self) -> np.ndarray:
        """``(log tau, log noise_var)``; ``-inf`` for a noise-free model."""
        with np.errstate(divide="ignore"):
            return np.array([np.log(self.tau), np.log(self.noise_var)])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        return cls(tau=float(np.exp(theta[0])), noise_var=float(np.exp(theta[1])))


def as_coords(X) -> np.ndarray:
    """Return the coordinate matrix of a point cloud or array-like as 2-D floats."""
    coords = getattr(X, "coords", X)
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    if coords.ndim != 2:
        raise InputError(f"expected a 2-D coordinate matrix, got shape {coords.shape}")
    return coords


def _check_tau(tau):
    if not np.isfinite(tau) or tau <= 0:
        raise InputError(f"tau must be positive and finite, got {tau!r}")


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, computed from coordinate differences."""
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.maximum(cdist(A, B, "sqeuclidean"), 0.0)


def se_kernel(x, x_prime, tau: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    _check_tau(tau)
    diff = x - x_prime
    return float(np.exp(-np.dot(diff, diff) / tau**2))


def kernel_matrix(X, tau: float) -> np.ndarray:
    """Symmetric ``m x m`` matrix ``K_ij = k(x_i, x_j)`` with unit diagonal."""
    coords = as_coords(X)
    if coords.shape[0] == 0:
        raise InputError("kernel_matrix of an empty point cloud")
    _check_tau(tau)
    D2 = sq_distances(coords, coords)
    np.fill_diagonal(D2, 0.0)
    K = np.exp(-D2 / tau**2)
    # cdist is symmetric up to rounding; enforce it exactly.
    return np.triu(K) + np.triu(K, 1).T


def cross_kernel(x_star, X, tau: float) -> np.ndarray:
    """Kernel values between test point(s) and the training cloud.

    A single coordinate vector gives a length-``m`` row; a matrix of ``n``
    test points gives an ``n x m`` array.
    """
    coords = as_coords(X)
    _check_tau(tau)
    x_star = np.asarray(x_star, dtype=float)
    single = x_star.ndim <= 1
    if x_star.ndim > 2:
        raise InputError(f"test points must be a vector or matrix, got shape {x_star.shape}")
    Xs = x_star.reshape(1, -1) if single else x_star
    Ks = np.exp(-sq_distances(Xs, coords) / tau**2)
    return Ks[0] if single else Ks


def kernel_matrix_grad(X, tau: float) -> np.ndarray:
    """Derivative of :func:`kernel_matrix` with respect to ``log tau``.

    ``dk/dlog(tau) = 2 ||x - x'||^2 / tau^2 * k``; the diagonal is zero.
    """
    coords = as_coords(X)
    if coords.shape[0] == 0:
        raise InputError("kernel_matrix_grad of an empty point cloud")
    _check_tau(tau)
    D2 = sq_distances(coords, coords)
    np.fill_diagonal(D2, 0.0)
    D2 = np.triu(D2) + np.triu(D2, 1).T
    scaled = D2 / tau**2
    return 2.0 * scaled * np.exp(-scaled)
