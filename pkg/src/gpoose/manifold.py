"""Training embeddings: diffusion maps, Laplacian eigenmaps, ISOMAP, classical MDS.

All learners run dense eigendecompositions through
:func:`gpoose.spectral.eigendecompose`, so their output (including
eigenvector signs) is deterministic for a given input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial.distance import cdist

from gpoose.errors import InputError, ReducedRankError
from gpoose.kernel import as_coords
from gpoose.spectral import eigendecompose

METHODS = ("dm", "le", "isomap", "mds")


@dataclass(eq=False)
class Embedding:
    coords: np.ndarray
    method: str
    params_used: dict = field(default_factory=dict)
    eigenvalues: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        if not np.all(np.isfinite(self.coords)):
            raise InputError("embedding contains non-finite coordinates")

    @property
    def d(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Symmetrized k-nearest-neighbour graph with Euclidean edge lengths."""

    m: int
    k: int
    weights: sp.csr_matrix  # edge lengths; stored zeros are real edges

    def adjacency(self) -> sp.csr_matrix:
        A = self.weights.copy()
        A.data = np.ones_like(A.data)
        return A

    def edges(self) -> list[tuple[int, int]]:
        coo = sp.triu(self.weights, k=1).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))

    def n_components(self) -> int:
        return connected_components(self.weights, directed=False)[0]


def _check_dim(d: int, m: int):
    if d < 1 or d > m - 1:
        raise InputError(f"target dimension must be in [1, {m - 1}], got {d}")


def knn_graph(X, k: int) -> NeighborGraph:
    """Each point links to its ``k`` nearest others; ties go to the lower index."""
    coords = as_coords(X)
    m = coords.shape[0]
    if not 1 <= k < m:
        raise InputError(f"k must satisfy 1 <= k < m={m}, got {k}")
    D = cdist(coords, coords)
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(m), k)
    cols = nbrs.ravel()
    # keep an edge if either endpoint selected it
    sel = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(m, m))
    sel = ((sel + sel.T) > 0).tocoo()
    W = sp.csr_matrix((D[sel.row, sel.col], (sel.row, sel.col)), shape=(m, m))
    return NeighborGraph(m, k, W)


def _require_connected(graph: NeighborGraph):
    n = graph.n_components()
    if n > 1:
        raise InputError(f"k-nearest-neighbour graph is disconnected ({n} components)")


# -- diffusion maps -----------------------------------------------------------


def resolve_bandwidth(coords: np.ndarray, eps_policy="median-sq") -> tuple[float, dict]:
    """Squared kernel bandwidth ``eps_sq`` for ``exp(-||x - y||^2 / eps_sq)``.

    Policies:

    * ``"median-sq"``: median squared pairwise distance.
    * ``"knn:K"`` or ``("knn", K)``: the median over points of the mean
      distance to the ``K`` nearest neighbours, squared.
    * ``"value:E"``, ``("explicit", E)`` or a bare number: the distance
      scale ``E`` given directly, squared.
    """
    kind, arg = _parse_policy(eps_policy)
    m = coords.shape[0]
    D2 = cdist(coords, coords, "sqeuclidean")
    if kind == "median-sq":
        iu = np.triu_indices(m, 1)
        eps_sq = float(np.median(D2[iu])) if iu[0].size else 0.0
        info = {"eps_policy": "median-sq"}
    elif kind == "knn":
        k = int(arg)
        if not 1 <= k < m:
            raise InputError(f"knn bandwidth needs 1 <= k < m, got {k}")
        D = np.sqrt(D2)
        np.fill_diagonal(D, np.inf)
        avg = np.sort(D, axis=1)[:, :k].mean(axis=1)
        eps_sq = float(np.median(avg)) ** 2
        info = {"eps_policy": f"knn:{k}"}
    else:
        eps = float(arg)
        if not np.isfinite(eps) or eps <= 0:
            raise InputError(f"explicit bandwidth must be positive, got {eps}")
        eps_sq = eps**2
        info = {"eps_policy": f"value:{eps!r}"}
    if eps_sq <= 0:
        raise InputError("bandwidth is zero (all points coincide)")
    info["eps_sq"] = eps_sq
    return eps_sq, info


def _parse_policy(policy):
    if isinstance(policy, (int, float)):
        return "explicit", float(policy)
    if isinstance(policy, tuple):
        kind, arg = policy
        if kind not in ("knn", "explicit"):
            raise InputError(f"unknown bandwidth policy {policy!r}")
        return kind, arg
    if policy in ("median-sq", "median-sq-pairwise"):
        return "median-sq", None
    if isinstance(policy, str) and ":" in policy:
        kind, _, arg = policy.partition(":")
        try:
            value = float(arg)
        except ValueError:
            raise InputError(f"bad bandwidth policy {policy!r}") from None
        if kind == "knn":
            return "knn", int(value)
        if kind in ("value", "explicit"):
            return "explicit", value
    raise InputError(f"unknown bandwidth policy {policy!r}")


def markov_matrix(X, eps_sq: float) -> np.ndarray:
    """Row-normalized Gaussian affinity ``P = D^-1 W``."""
    coords = as_coords(X)
    W = np.exp(-cdist(coords, coords, "sqeuclidean") / eps_sq)
    return W / W.sum(axis=1, keepdims=True)


def diffusion_spectrum(X, eps_sq: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and right eigenvectors ``psi`` of the Markov matrix.

    The symmetric conjugate ``D^-1/2 W D^-1/2`` is decomposed; ``psi`` is
    scaled so that the trivial eigenvector is identically 1.
    """
    coords = as_coords(X)
    W = np.exp(-cdist(coords, coords, "sqeuclidean") / eps_sq)
    W = 0.5 * (W + W.T)
    deg = W.sum(axis=1)
    s = np.sqrt(deg)
    vals, vecs = eigendecompose(W / np.outer(s, s))
    psi = vecs / s[:, None] * np.sqrt(deg.sum())
    # the trivial eigenvector is positive (Perron), so sign fixing keeps it at +1
    return vals, psi


def diffusion_maps(X, d: int, eps_policy="median-sq") -> Embedding:
    """Diffusion-map coordinates ``lambda_j psi_j`` for the ``d`` leading nontrivial pairs."""
    coords = as_coords(X)
    m = coords.shape[0]
    _check_dim(d, m)
    eps_sq, info = resolve_bandwidth(coords, eps_policy)
    vals, psi = diffusion_spectrum(coords, eps_sq)
    emb = psi[:, 1 : d + 1] * vals[1 : d + 1]
    info.update(d=d, diffusion_time=1)
    return Embedding(emb, "dm", info, vals)


# -- Laplacian eigenmaps ------------------------------------------------------


def laplacian_eigenmaps(X, k: int = 8, d: int = 2) -> Embedding:
    """Generalized eigenvectors of ``L v = mu D v`` with 0/1 kNN weights.

    Returns the eigenvectors of the ``d`` smallest nonzero ``mu``; they are
    orthonormal in the ``D`` inner product.
    """
    coords = as_coords(X)
    m = coords.shape[0]
    _check_dim(d, m)
    graph = knn_graph(coords, k)
    _require_connected(graph)
    W = graph.adjacency().toarray()
    deg = W.sum(axis=1)
    s = np.sqrt(deg)
    # smallest mu of D^-1/2 L D^-1/2 are the largest eigenvalues of D^-1/2 W D^-1/2
    nu, U = eigendecompose(W / np.outer(s, s))
    V = U[:, 1 : d + 1] / s[:, None]
    return Embedding(V, "le", {"k": k, "d": d, "weights": "binary"}, 1.0 - nu)


# -- ISOMAP / MDS -------------------------------------------------------------


def geodesic_distances(X, k: int = 8) -> np.ndarray:
    graph = knn_graph(X, k)
    _require_connected(graph)
    G = dijkstra(graph.weights, directed=False)
    return 0.5 * (G + G.T)


def isomap(X, k: int = 8, d: int = 2) -> Embedding:
    coords = as_coords(X)
    _check_dim(d, coords.shape[0])
    G = geodesic_distances(coords, k)
    emb = classical_mds(G, d)
    return Embedding(emb.coords, "isomap", {"k": k, "d": d}, emb.eigenvalues)


def classical_mds(D, d: int) -> Embedding:
    """Embed a distance matrix through the double-centred Gram matrix.

    Raises :class:`ReducedRankError` when fewer than ``d`` eigenvalues are
    positive.  An all-zero distance matrix embeds to the origin.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InputError(f"distance matrix must be square, got {D.shape}")
    m = D.shape[0]
    if m > 1:
        _check_dim(d, m)
    scale = max(1.0, float(np.abs(D).max())) if D.size else 1.0
    if np.max(np.abs(D - D.T)) > 1e-10 * scale:
        raise InputError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(D)) > 1e-10 * scale) or np.any(D < 0):
        raise InputError("distance matrix needs a zero diagonal and non-negative entries")
    if not np.any(D):
        return Embedding(np.zeros((m, d)), "mds", {"d": d}, np.zeros(m))
    J = np.eye(m) - 1.0 / m
    B = -0.5 * J @ (D**2) @ J
    vals, vecs = eigendecompose(0.5 * (B + B.T))
    positive = vals > 1e-12 * max(1.0, abs(vals[0]))
    available = int(positive.sum())
    if available < d:
        raise ReducedRankError(
            f"only {available} positive eigenvalue(s), {d} requested", available
        )
    coords = vecs[:, :d] * np.sqrt(vals[:d])
    return Embedding(coords, "mds", {"d": d}, vals)


def mds(X, d: int = 2) -> Embedding:
    """Classical MDS on Euclidean distances of ``X``."""
    coords = as_coords(X)
    return classical_mds(cdist(coords, coords), d)


def spectral_dim(eigenvalues) -> int:
    """Target dimension at the largest ratio gap ``lam_j / lam_{j+1}``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size < 2:
        raise InputError("spectral_dim needs at least two eigenvalues")
    pos = lam[lam > 0]
    if pos.size == 0:
        raise InputError("no positive eigenvalues")
    if pos.size == 1:
        return 1
    ratios = pos[:-1] / pos[1:]
    return int(np.argmax(ratios)) + 1


def embed(X, method: str, d: int = 2, k: int = 8, eps_policy="median-sq") -> Embedding:
    """Dispatch to a learner by name (``dm``, ``le``, ``isomap``, ``mds``)."""
    method = method.lower()
    if method == "dm":
        return diffusion_maps(X, d, eps_policy)
    if method == "le":
        return laplacian_eigenmaps(X, k, d)
    if method == "isomap":
        return isomap(X, k, d)
    if method == "mds":
        return mds(X, d)
    raise InputError(f"unknown method {method!r}; choose from {METHODS}")
