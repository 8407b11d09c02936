"""Symmetric eigendecomposition and the Nystrom extension.

For a kernel matrix ``K = V diag(lam) V^T`` the Nystrom extension embeds a
new point as ``lam_j^-1 k_* . v_j``.  Because ``K^-1 = V diag(1/lam) V^T``,
this is exactly the mean of a noise-free GPR trained on the eigenvector
``v_j``; :func:`equivalence_residual` measures how closely the two
implementations agree numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gpoose.errors import InputError
from gpoose.kernel import KernelParams, as_coords, cross_kernel, kernel_matrix

SYMMETRY_TOL = 1e-10
# Eigenvalues at or below this magnitude are not used for extension.
EIGEN_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel_tau: float
    train_inputs: np.ndarray
    normalization: str = "raw-kernel"

    @property
    def significant(self) -> np.ndarray:
        """Indices of eigenpairs that can be extended."""
        return np.flatnonzero(np.abs(self.eigenvalues) > EIGEN_FLOOR)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(K) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix, sorted by non-increasing eigenvalue.

    Eigenvectors are the columns of the returned matrix, with the sign
    convention of :func:`fix_signs`.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"expected a square matrix, got shape {K.shape}")
    asym = np.max(np.abs(K - K.T)) if K.size else 0.0
    if asym > SYMMETRY_TOL:
        raise InputError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    return vals.copy(), fix_signs(np.ascontiguousarray(vecs))


def kernel_embedding(X, tau: float) -> SpectralEmbedding:
    """Eigendecomposition of the raw squared-exponential kernel matrix of ``X``."""
    coords = as_coords(X)
    vals, vecs = eigendecompose(kernel_matrix(coords, tau))
    return SpectralEmbedding(vals, vecs, float(tau), coords, "raw-kernel")


def nystrom_extend(emb: SpectralEmbedding, x_star, dims: int) -> np.ndarray:
    """Nystrom coordinates of ``x_star`` in the first ``dims`` eigenvectors.

    ``x_star`` may be a single point (returns length ``dims``) or a matrix of
    points (returns ``n x dims``).
    """
    if dims < 1 or dims > emb.eigenvalues.shape[0]:
        raise InputError(f"dims must be in [1, {emb.eigenvalues.shape[0]}], got {dims}")
    lam = emb.eigenvalues[:dims]
    bad = np.flatnonzero(np.abs(lam) <= EIGEN_FLOOR)
    if bad.size:
        raise InputError(
            f"eigenvalue {bad[0]} is numerically zero ({lam[bad[0]]:.3e}); "
            "only significant eigenpairs can be extended"
        )
    k = cross_kernel(x_star, emb.train_inputs, emb.kernel_tau)
    return (k @ emb.eigenvectors[:, :dims]) / lam


def nystrom_regress(emb: SpectralEmbedding, values, x_star) -> np.ndarray:
    """Extend arbitrary training values through the significant eigenpairs.

    ``values`` (``m`` or ``m x d``) is expanded in the kernel eigenbasis and
    each component is extended with the Nystrom formula; eigenpairs at the
    numerical floor are dropped.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != emb.train_inputs.shape[0]:
        raise InputError(
            f"{values.shape[0]} training values for {emb.train_inputs.shape[0]} points"
        )
    keep = emb.significant
    V = emb.eigenvectors[:, keep]
    coeffs = (V.T @ values) / emb.eigenvalues[keep].reshape((-1,) + (1,) * (values.ndim - 1))
    k = cross_kernel(x_star, emb.train_inputs, emb.kernel_tau)
    return (k @ V) @ coeffs


def equivalence_residual(X, tau: float, n_test: int, seed: int = 0, test_points=None) -> float:
    """Max abs difference between the Nystrom extension and noise-free GPR.

    Both pipelines are built on ``X``; GPR is trained separately on every
    significant eigenvector.  Test points are drawn uniformly from the
    bounding box of ``X`` unless ``test_points`` is given.
    """
    from gpoose.gpr import predict_mean, train

    coords = as_coords(X)
    if test_points is None:
        if n_test < 0:
            raise InputError("n_test must be non-negative")
        if n_test == 0:
            return 0.0
        rng = np.random.default_rng(seed)
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        test_points = rng.uniform(lo, hi, size=(n_test, coords.shape[1]))
    test_points = as_coords(test_points)
    if test_points.shape[0] == 0:
        return 0.0
    emb = kernel_embedding(coords, tau)
    dims = emb.significant
    if dims.size == 0:
        raise InputError("kernel matrix has no significant eigenvalues")
    dims = np.arange(dims.max() + 1)
    nys = nystrom_extend(emb, test_points, dims.size)
    model = train(coords, emb.eigenvectors[:, dims], KernelParams(tau, 0.0))
    gpr = predict_mean(model, test_points)
    return float(np.max(np.abs(nys - gpr)))
