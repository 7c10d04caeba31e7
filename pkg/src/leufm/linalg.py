"""Small dense linear-algebra helpers with fixed SVD conventions.

Every routine works on float64 numpy arrays.  The SVD returned by
:func:`svd_desc` has non-increasing singular values and a deterministic sign
choice, so downstream quantities built from the singular vectors are
reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_PINV_RTOL = 1e-10


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``m = u @ diag(s) @ v.T``."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a 2-D float64 array, rejecting NaN/Inf entries."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite matrix")
    return a


def svd_desc(m) -> SvdFactors:
    """Thin SVD with descending singular values and a fixed sign convention.

    In each column of ``u`` the entry of largest magnitude is made
    non-negative (first such row on exact ties); the matching column of ``v``
    is flipped with it so the product is unchanged.
    """
    a = as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    v = vt.T.copy()
    if u.size:
        pivot = np.argmax(np.abs(u), axis=0)
        flip = u[pivot, np.arange(u.shape[1])] < 0
        u[:, flip] *= -1.0
        v[:, flip] *= -1.0
    return SvdFactors(u=u, s=s, v=v)


def pinv(m, rel_tol: float = DEFAULT_PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse.

    Singular values ``s_i <= rel_tol * s_max`` are treated as zero.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    f = svd_desc(m)
    if f.s.size == 0 or f.s[0] == 0.0:
        return np.zeros((f.v.shape[0], f.u.shape[0]))
    keep = f.s > rel_tol * f.s[0]
    inv_s = np.zeros_like(f.s)
    inv_s[keep] = 1.0 / f.s[keep]
    return (f.v * inv_s) @ f.u.T


def svt(m, tau: float) -> np.ndarray:
    """Singular value soft-thresholding ``U (S - tau)_+ V^T``.

    This is the proximal map of ``tau * ||.||_*``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    f = svd_desc(m)
    return (f.u * np.maximum(f.s - tau, 0.0)) @ f.v.T


def nuclear_norm(m) -> float:
    return float(np.sum(svd_desc(m).s))


def orthonormal_embed(k: int, d: int) -> np.ndarray:
    """``d x k`` matrix holding the first ``k`` standard basis vectors of R^d."""
    if k < 0 or d < 1:
        raise ValueError("dimensions must be positive")
    if k > d:
        raise ValueError(f"cannot embed {k} orthonormal columns in R^{d}")
    return np.eye(d, k)


def write_matrix(path, m) -> None:
    """Write a matrix as CSV rows with 17 significant digits."""
    a = as_matrix(m)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in a:
            writer.writerow([f"{x:.17g}" for x in row])


def read_matrix(path) -> np.ndarray:
    """Read a CSV matrix; shape is inferred from the rows.

    Raises ``ValueError`` naming the 1-based row/column of a bad cell.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            parsed = []
            for j, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {i}, column {j}: cannot parse {cell!r} as a number"
                    ) from None
            if rows and len(parsed) != len(rows[0]):
                raise ValueError(
                    f"{path}: row {i} has {len(parsed)} columns, expected {len(rows[0])}"
                )
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    return as_matrix(np.array(rows))
