"""Regularized MSE objective of the L-layer unconstrained feature model.

    f = 1/(2N) ||W_L ... W_1 H + b 1^T - Y||_F^2
        + 1/2 sum_j lambda_j ||W_j||_F^2 + lambda_H/2 ||H||_F^2

``b`` is unregularized and may be absent (bias-free mode).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imbalance import LabelAlgebra
from .linalg import read_matrix, write_matrix


@dataclass(frozen=True)
class RegParams:
    """Weight decays ``lambda_w = (lambda_{W_1}, ..., lambda_{W_L})`` and ``lambda_h``."""

    lambda_w: tuple[float, ...]
    lambda_h: float
    rho_b: float = 0.0

    def __post_init__(self):
        lw = tuple(float(x) for x in np.atleast_1d(self.lambda_w))
        object.__setattr__(self, "lambda_w", lw)
        if not lw:
            raise ValueError("need at least one layer")
        if any(x <= 0 for x in lw) or self.lambda_h <= 0:
            raise ValueError("regularization strengths must be positive")
        if self.rho_b != 0:
            raise ValueError("bias regularization is fixed at 0")

    @property
    def L(self) -> int:
        return len(self.lambda_w)

    @classmethod
    def uniform(cls, lam: float, L: int = 1, lambda_h: float | None = None) -> "RegParams":
        return cls((lam,) * L, lam if lambda_h is None else lambda_h)


@dataclass(frozen=True)
class Dims:
    """Layer widths ``d = [d_0, ..., d_{L-1}]``; the output width is ``K``."""

    d: tuple[int, ...]
    K: int

    def __post_init__(self):
        d = tuple(int(x) for x in self.d)
        object.__setattr__(self, "d", d)
        if not d or any(x < 1 for x in d) or self.K < 1:
            raise ValueError("all widths must be >= 1")

    @property
    def L(self) -> int:
        return len(self.d)

    @property
    def r(self) -> int:
        return min(self.K, *self.d)

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = list(self.d) + [self.K]
        return [(widths[j + 1], widths[j]) for j in range(self.L)]


@dataclass
class ModelParams:
    """``weights[j]`` is ``W_{j+1}``; ``h`` is ``d_0 x N``; ``b`` is None when bias-free."""

    weights: list[np.ndarray]
    h: np.ndarray
    b: np.ndarray | None = None

    @property
    def L(self) -> int:
        return len(self.weights)

    @property
    def bias(self) -> bool:
        return self.b is not None

    def product(self) -> np.ndarray:
        """``W_L ... W_1``."""
        p = self.weights[0]
        for w in self.weights[1:]:
            p = w @ p
        return p

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights], self.h.copy(), None if self.b is None else self.b.copy()
        )

    def arrays(self) -> list[np.ndarray]:
        out = list(self.weights) + [self.h]
        if self.b is not None:
            out.append(self.b)
        return out

    def check(self, la: LabelAlgebra) -> None:
        K, N = la.spec.K, la.spec.N
        prev = self.h.shape[0]
        if self.h.ndim != 2 or self.h.shape[1] != N:
            raise ValueError(f"H must have {N} columns, got shape {self.h.shape}")
        for j, w in enumerate(self.weights, start=1):
            if w.ndim != 2 or w.shape[1] != prev:
                raise ValueError(f"W_{j} has shape {w.shape}; expected {prev} columns")
            prev = w.shape[0]
        if prev != K:
            raise ValueError(f"W_L must have {K} rows, got {prev}")
        if self.b is not None and self.b.shape != (K,):
            raise ValueError(f"b must have shape ({K},), got {self.b.shape}")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("non-finite parameter")


@dataclass
class Gradients:
    weights: list[np.ndarray]
    h: np.ndarray
    b: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = list(self.weights) + [self.h]
        if self.b is not None:
            out.append(self.b)
        return out

    def inf_norm(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.arrays())


def _check_reg(p: ModelParams, reg: RegParams) -> None:
    if reg.L != p.L:
        raise ValueError(f"{reg.L} weight decays given for {p.L} layers")


def residual(p: ModelParams, la: LabelAlgebra) -> np.ndarray:
    out = p.product() @ p.h - la.y
    if p.b is not None:
        out += p.b[:, None]
    return out


def objective(p: ModelParams, la: LabelAlgebra, reg: RegParams) -> float:
    p.check(la)
    _check_reg(p, reg)
    N = la.spec.N
    r = residual(p, la)
    val = 0.5 / N * np.sum(r * r)
    val += 0.5 * sum(lam * np.sum(w * w) for lam, w in zip(reg.lambda_w, p.weights))
    val += 0.5 * reg.lambda_h * np.sum(p.h * p.h)
    return float(val)


def gradients(p: ModelParams, la: LabelAlgebra, reg: RegParams) -> Gradients:
    p.check(la)
    _check_reg(p, reg)
    N = la.spec.N
    L = p.L
    r = residual(p, la) / N

    # below[j] = W_j ... W_1 (below[0] = I), above[j] = W_L ... W_{j+1}
    below = [np.eye(p.h.shape[0])]
    for w in p.weights:
        below.append(w @ below[-1])
    above = [None] * (L + 1)
    above[L] = np.eye(la.spec.K)
    for j in range(L - 1, -1, -1):
        above[j] = above[j + 1] @ p.weights[j]

    rht = r @ p.h.T
    gw = []
    for j in range(L):
        g = above[j + 1].T @ rht @ below[j].T
        gw.append(g + reg.lambda_w[j] * p.weights[j])
    gh = above[0].T @ r + reg.lambda_h * p.h
    gb = r.sum(axis=1) if p.b is not None else None
    return Gradients(gw, gh, gb)


@dataclass
class FDReport:
    max_rel: float
    max_abs: float
    n_coords: int = field(default=0)


def fd_check(
    p: ModelParams,
    la: LabelAlgebra,
    reg: RegParams,
    step: float = 1e-5,
    n_coords: int = 100,
    seed: int = 0,
) -> FDReport:
    """Compare analytic gradients with central differences on sampled coordinates."""
    if step <= 0:
        raise ValueError("step must be positive")
    grads = gradients(p, la, reg).arrays()
    work = p.copy()
    arrays = work.arrays()
    sizes = np.array([a.size for a in arrays])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    max_rel = max_abs = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[k]), arrays[k].shape)
        orig = arrays[k][idx]
        arrays[k][idx] = orig + step
        f_plus = objective(work, la, reg)
        arrays[k][idx] = orig - step
        f_minus = objective(work, la, reg)
        arrays[k][idx] = orig
        fd = (f_plus - f_minus) / (2 * step)
        an = grads[k][idx]
        err = abs(an - fd)
        max_abs = max(max_abs, err)
        max_rel = max(max_rel, err / (abs(an) + 1e-12))
    return FDReport(max_rel=max_rel, max_abs=max_abs, n_coords=len(picks))


def logits(p: ModelParams) -> np.ndarray:
    out = p.product() @ p.h
    if p.b is not None:
        out = out + p.b[:, None]
    return out


def predict_accuracy(p: ModelParams, la: LabelAlgebra) -> float:
    p.check(la)
    pred = np.argmax(logits(p), axis=0)  # first maximum wins
    return float(np.mean(pred == la.spec.labels))


def class_means(h: np.ndarray, counts) -> np.ndarray:
    """``d x K`` matrix of per-class column means (class-major layout)."""
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return np.stack([h[:, bounds[k]:bounds[k + 1]].mean(axis=1) for k in range(len(counts))], axis=1)


def save_params(p: ModelParams, out_dir) -> None:
    """Write ``W1.csv ... WL.csv``, ``H.csv``, ``b.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for j, w in enumerate(p.weights, start=1):
        write_matrix(out / f"W{j}.csv", w)
        files[f"W{j}"] = {"file": f"W{j}.csv", "shape": list(w.shape)}
    write_matrix(out / "H.csv", p.h)
    files["H"] = {"file": "H.csv", "shape": list(p.h.shape)}
    if p.b is not None:
        write_matrix(out / "b.csv", p.b.reshape(-1, 1))
        files["b"] = {"file": "b.csv", "shape": [p.b.size]}
    manifest = {"L": p.L, "bias": p.bias, "matrices": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_params(in_dir) -> ModelParams:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    mats = manifest["matrices"]

    def _load(key):
        entry = mats[key]
        a = read_matrix(src / entry["file"])
        if key == "b":
            a = a.reshape(-1)
        if list(a.shape) != list(entry["shape"]):
            raise ValueError(f"{entry['file']}: shape {a.shape} != manifest {entry['shape']}")
        return a

    weights = [_load(f"W{j}") for j in range(1, manifest["L"] + 1)]
    b = _load("b") if manifest.get("bias") else None
    return ModelParams(weights, _load("H"), b)
