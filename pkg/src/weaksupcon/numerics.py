"""Dense linear-algebra helpers: row normalization, cosine similarity,
stable log-sum-exp, a two-component PCA, and matrix CSV round-tripping.

Matrices are plain 2-D ``float64`` numpy arrays; vectors are 1-D arrays.
"""
import csv
import math
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DegenerateData, EmptyInput, ShapeMismatch, ZeroRow

EPS = 1e-12


def as_matrix(values, rows=None, cols=None):
    """Coerce to a finite float64 matrix, optionally from a flat row-major list."""
    m = np.asarray(values, dtype=np.float64)
    if rows is not None or cols is not None:
        if m.size != rows * cols:
            raise ShapeMismatch(f"expected {rows}x{cols}={rows * cols} values, got {m.size}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeMismatch(f"matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def as_vector(values):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatch(f"vector must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def row_norms(m):
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms <= EPS)
    if bad.size:
        raise ZeroRow(f"row {int(bad[0])} has norm <= {EPS:g}")
    return norms


def l2_normalize_rows(m):
    m = np.asarray(m, dtype=np.float64)
    return m / row_norms(m)[:, None]


def cosine_sim(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu <= EPS or nv <= EPS:
        raise ZeroRow("cosine of a zero vector is undefined")
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))


def pairwise_sim(z):
    """All-pairs cosine similarity, clamped to [-1, 1], unit diagonal."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise EmptyInput("pairwise_sim needs at least one row")
    u = l2_normalize_rows(z)
    s = u @ u.T
    s = 0.5 * (s + s.T)
    np.clip(s, -1.0, 1.0, out=s)
    np.fill_diagonal(s, 1.0)
    return s


def stable_logsumexp(xs):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        raise EmptyInput("logsumexp of an empty sequence")
    top = float(xs.max())
    return top + math.log(float(np.exp(xs - top).sum()))


def masked_row_logsumexp(x, mask):
    """Row-wise log-sum-exp over entries where ``mask`` is True.

    Rows with an empty mask get ``-inf``.
    """
    big = np.where(mask, x, -np.inf)
    top = big.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(big - safe[:, None]).sum(axis=1))


def pca_2d(x, *, tol=1e-13, max_iter=200_000):
    """Project mean-centered rows onto the top-2 covariance eigenvectors.

    The eigenpairs come from orthogonal iteration on the d x d covariance with
    a closed-form 2 x 2 Rayleigh-Ritz step. Returns ``(projection, components,
    explained_variance)`` with components as rows.
    """
    x = as_matrix(x)
    n, d = x.shape
    if n < 3 or d < 2:
        raise DegenerateData(f"pca_2d needs >= 3 rows and >= 2 cols, got {n}x{d}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    if not np.any(cov):
        raise DegenerateData("covariance is identically zero")
    # start from the two highest-variance coordinate axes plus a small tilt
    order = np.argsort(-np.diag(cov), kind="stable")
    q0 = np.full((d, 2), 1e-3)
    q0[order[0], 0] = 1.0
    q0[order[1], 1] = 1.0
    vals, vecs, _ = _kernels.top2_eigh(cov, q0, tol, max_iter)
    comps = np.ascontiguousarray(vecs.T)
    for r in range(2):
        if comps[r, np.argmax(np.abs(comps[r]))] < 0:
            comps[r] = -comps[r]
    explained = np.maximum(np.asarray(vals, dtype=np.float64), 0.0)
    return centered @ comps.T, comps, explained


def pca_apply(x, mean, components):
    return (np.asarray(x, dtype=np.float64) - mean) @ components.T


def write_matrix_csv(path, m, header=None):
    m = as_matrix(m)
    header = header or [f"c{j}" for j in range(m.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path):
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyInput(f"{path} is empty")
    cols = len(rows[0])
    data = [[float(v) for v in r] for r in rows[1:]]
    return as_matrix(data) if data else np.zeros((0, cols))
