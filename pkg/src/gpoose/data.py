"""Synthetic manifolds, CSV and model I/O, and min-max scaling.

Generator parameterizations (all return ``n x 3`` clouds):

========================  ====================================================
swiss_roll                ``(t cos t, h, t sin t)``, ``t ~ U[3pi/2, 9pi/2]``,
                          ``h ~ U[0, 21]``
swiss_hole                swiss roll without the window ``t in [9, 12]``,
                          ``h in [7, 14]``
corner_planes             ``(u, v, 0)`` for ``u < 0`` and
                          ``(u cos a, v, u sin a)`` for ``u >= 0``,
                          ``a = pi/4``, ``u ~ U[-1, 1]``, ``v ~ U[0, 1]``
punctured_sphere          unit sphere without the cap ``z > 0.8``
twin_peaks                ``z = sin(pi x) tanh(3 y)`` over ``[-1, 1]^2``
clusters_3d               five isotropic blobs (sd 0.3) centred on the line
                          ``s (1, 1, 1)``, ``s = 0, 1.5, ..., 6``
toroidal_helix            ``((R + r cos wt) cos t, (R + r cos wt) sin t,
                          r sin wt)``, ``R = 2``, ``r = 1``, ``w = 8``
========================  ====================================================

Randomness comes from numpy's PCG64.  The seed is split with
``SeedSequence(seed).spawn(2)``: the first child stream samples the
manifold, the second draws the additive noise, so the clean cloud does not
depend on the noise level.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from gpoose.errors import FormatError, InputError
from gpoose.kernel import KernelParams, as_coords

MODEL_FORMAT = "gpoose-gpr-model"
MODEL_VERSION = 1

SWISS_T_RANGE = (1.5 * np.pi, 4.5 * np.pi)
SWISS_H_RANGE = (0.0, 21.0)
SWISS_HOLE_WINDOW = ((9.0, 12.0), (7.0, 14.0))
CORNER_ANGLE = np.pi / 4
SPHERE_CAP_Z = 0.8
HELIX_R, HELIX_r, HELIX_W = 2.0, 1.0, 8.0
DEFAULT_NOISE_FRACTION = 0.01


@dataclass(eq=False)
class PointCloud:
    coords: np.ndarray
    labels: np.ndarray | None = None
    manifold_params: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 2:
            raise InputError(f"coords must be 2-D, got shape {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise InputError("point cloud contains non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.coords.shape[0],):
                raise InputError("labels must be aligned with the cloud rows")

    def __len__(self):
        return self.coords.shape[0]

    @property
    def m(self) -> int:
        return self.coords.shape[0]

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.coords[idx],
            None if self.labels is None else self.labels[idx],
            None if self.manifold_params is None else self.manifold_params[idx],
            self.name,
        )


# -- generators ---------------------------------------------------------------


def _swiss(rng, n, hole=False):
    t = np.empty(0)
    h = np.empty(0)
    while t.size < n:
        tt = rng.uniform(*SWISS_T_RANGE, size=n)
        hh = rng.uniform(*SWISS_H_RANGE, size=n)
        if hole:
            (t0, t1), (h0, h1) = SWISS_HOLE_WINDOW
            keep = ~((tt >= t0) & (tt <= t1) & (hh >= h0) & (hh <= h1))
            tt, hh = tt[keep], hh[keep]
        t, h = np.concatenate([t, tt]), np.concatenate([h, hh])
    t, h = t[:n], h[:n]
    return np.column_stack([t * np.cos(t), h, t * np.sin(t)]), np.column_stack([t, h])


def swiss_arclength(t) -> np.ndarray:
    """Arc length of the spiral ``(t cos t, t sin t)`` from 0 to ``t``.

    ``(swiss_arclength(t), h)`` is an isometric chart of the swiss roll.
    """
    t = np.asarray(t, dtype=float)
    return 0.5 * (t * np.sqrt(1.0 + t**2) + np.arcsinh(t))


def _corner_planes(rng, n):
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(0.0, 1.0, size=n)
    bent = u >= 0
    x = np.where(bent, u * np.cos(CORNER_ANGLE), u)
    z = np.where(bent, u * np.sin(CORNER_ANGLE), 0.0)
    return np.column_stack([x, v, z]), np.column_stack([u, v])


def _punctured_sphere(rng, n):
    # uniform on the sphere: z uniform, azimuth uniform
    z = rng.uniform(-1.0, SPHERE_CAP_Z, size=n)
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    rho = np.sqrt(1.0 - z**2)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z]), np.column_stack([z, phi])


def _twin_peaks(rng, n):
    x = rng.uniform(-1.0, 1.0, size=n)
    y = rng.uniform(-1.0, 1.0, size=n)
    return np.column_stack([x, y, np.sin(np.pi * x) * np.tanh(3 * y)]), np.column_stack([x, y])


def _clusters(rng, n):
    k = rng.integers(0, 5, size=n)
    centers = 1.5 * k[:, None] * np.ones((1, 3))
    return centers + 0.3 * rng.standard_normal((n, 3)), k[:, None].astype(float)


def _toroidal_helix(rng, n):
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    ring = HELIX_R + HELIX_r * np.cos(HELIX_W * t)
    pts = np.column_stack([ring * np.cos(t), ring * np.sin(t), HELIX_r * np.sin(HELIX_W * t)])
    return pts, t[:, None]


GENERATORS = {
    "swiss_roll": lambda rng, n: _swiss(rng, n),
    "swiss_hole": lambda rng, n: _swiss(rng, n, hole=True),
    "corner_planes": _corner_planes,
    "punctured_sphere": _punctured_sphere,
    "twin_peaks": _twin_peaks,
    "clusters_3d": _clusters,
    "toroidal_helix": _toroidal_helix,
}


def default_noise_sd(coords: np.ndarray) -> float:
    """One percent of the bounding-box diagonal."""
    return DEFAULT_NOISE_FRACTION * float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))


def generate(name: str, n: int, seed: int = 0, noise_sd: float | None = None) -> PointCloud:
    """Sample ``n`` points from a named synthetic manifold.

    ``noise_sd=None`` adds isotropic Gaussian noise at one percent of the
    clean cloud's bounding-box diagonal; pass 0 for an exact sample.
    """
    if name not in GENERATORS:
        raise InputError(f"unknown dataset {name!r}; choose from {sorted(GENERATORS)}")
    if n < 10:
        raise InputError(f"n must be at least 10, got {n}")
    if noise_sd is not None and (not np.isfinite(noise_sd) or noise_sd < 0):
        raise InputError(f"noise_sd must be non-negative, got {noise_sd}")
    shape_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    coords, params = GENERATORS[name](np.random.Generator(np.random.PCG64(shape_seq)), n)
    sd = default_noise_sd(coords) if noise_sd is None else noise_sd
    if sd > 0:
        noise_rng = np.random.Generator(np.random.PCG64(noise_seq))
        coords = coords + sd * noise_rng.standard_normal(coords.shape)
    return PointCloud(coords, manifold_params=params, name=name)


# -- scaling ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MinMaxScaler:
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}


def fit_minmax(X) -> MinMaxScaler:
    coords = as_coords(X)
    if coords.shape[0] < 1:
        raise InputError("fit_minmax needs at least one row")
    return MinMaxScaler(coords.min(axis=0), coords.max(axis=0))


def apply_minmax(scaler: MinMaxScaler, X):
    """Map with the frozen training range; no clamping, so test data may leave [0, 1]."""
    coords = as_coords(X)
    if coords.shape[1] != scaler.mins.shape[0]:
        raise InputError(f"scaler fitted on {scaler.mins.shape[0]} columns, got {coords.shape[1]}")
    span = scaler.maxs - scaler.mins
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (coords - scaler.mins) / safe, 0.0)
    if isinstance(X, PointCloud):
        return PointCloud(scaled, X.labels, X.manifold_params, X.name)
    return scaled


# -- files --------------------------------------------------------------------


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return format(float(x), ".17g")


def format_csv(rows, header=None) -> str:
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    return "\n".join(lines) + ("\n" if lines else "")


def save_csv(obj, path, header=None, labels=None):
    """Write a cloud, embedding or array as comma-separated rows.

    Values are printed with 17 significant digits.  Labels (given, or taken
    from a :class:`PointCloud`) are appended as a trailing integer column.
    """
    coords = as_coords(obj)
    if labels is None:
        labels = getattr(obj, "labels", None)
    if header is True:
        header = [f"x{j}" for j in range(coords.shape[1])]
        if labels is not None:
            header.append("label")
    rows = [[_fmt(v) for v in row] for row in coords]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != coords.shape[0]:
            raise InputError("labels must be aligned with the rows")
        rows = [r + [str(int(lab))] for r, lab in zip(rows, labels)]
    atomic_write(path, format_csv(rows, header))


def load_csv(path, header: bool = False, label_column: bool = False, allow_empty: bool = False):
    """Read a numeric CSV into a :class:`PointCloud`.

    ``header`` skips the first row; ``label_column`` treats the last column
    as integer labels.  Ragged or non-numeric rows raise :class:`FormatError`
    with the offending position (1-based).
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text ({exc})") from None
    if not rows and not allow_empty:
        raise InputError(f"{path}: empty file")
    start = 1 if header and rows else 0
    data = [(i, r) for i, r in enumerate(rows[start:], start=start + 1) if r and any(c.strip() for c in r)]
    if not data:
        if allow_empty:
            return PointCloud(np.empty((0, 0)))
        raise InputError(f"{path}: no data rows")
    width = len(data[0][1])
    values = []
    for lineno, row in data:
        if len(row) != width:
            raise FormatError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise FormatError(
                    f"{path}: row {lineno}, column {col}: non-numeric value {cell!r}"
                ) from None
        values.append(parsed)
    arr = np.array(values, dtype=float)
    labels = None
    if label_column:
        if arr.shape[1] < 2:
            raise FormatError(f"{path}: label column requested but only one column present")
        labels = arr[:, -1]
        if not np.all(labels == np.round(labels)):
            raise FormatError(f"{path}: label column must hold integers")
        labels = labels.astype(int)
        arr = arr[:, :-1]
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return PointCloud(arr, labels=labels, name=os.path.basename(os.fspath(path)))


def model_to_dict(model) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "d": model.d,
        "train_inputs": model.train_inputs.tolist(),
        "dims": [
            {
                "tau": dm.params.tau,
                "noise_var": dm.params.noise_var,
                "offset": dm.offset,
                "jitter": dm.jitter,
                "A": dm.A.tolist(),
                "w": dm.w.tolist(),
            }
            for dm in model.dims
        ],
    }


def model_from_dict(doc):
    from gpoose.gpr import GprDimModel, GprModel, refactor

    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError("not a GPR model file")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        X = np.array(doc["train_inputs"], dtype=float)
        m = X.shape[0]
        dims = []
        for entry in doc["dims"]:
            A = np.array(entry["A"], dtype=float)
            w = np.array(entry["w"], dtype=float)
            if X.ndim != 2 or A.shape != (m, m) or w.shape != (m,):
                raise FormatError("inconsistent array shapes in model file")
            params = KernelParams(float(entry["tau"]), float(entry["noise_var"]))
            jitter = float(entry["jitter"])
            try:
                L = refactor(X, params, jitter)
            except np.linalg.LinAlgError:
                L = None
            dims.append(GprDimModel(A, w, params, X, float(entry["offset"]), jitter, L))
        if len(dims) != doc["d"]:
            raise FormatError("dimension count does not match stored dims")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed model file: {exc}") from None
    return GprModel(tuple(dims))


def save_model(model, path):
    # json writes floats with their shortest round-trip repr, so values are exact
    atomic_write(path, json.dumps(model_to_dict(model)))


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt model file ({exc})") from None
    return model_from_dict(doc)
