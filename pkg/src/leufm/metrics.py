"""Neural-collapse metrics comparing a parameter set with the predicted geometry.

NC2 and NC3 values are Frobenius distances between scale-normalized matrices,
so they are invariant to rescaling either side.  A quantity whose
normalizing denominator vanishes is reported as ``None`` with a flag
explaining why, never as NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytic import AnalyticSolution
from .imbalance import ImbalanceSpec, LabelAlgebra
from .linalg import DEFAULT_PINV_RTOL, pinv
from .model import ModelParams

DEGENERATE_TOL = 1e-12
FIELDS = ("nc1", "nc2w", "nc2h", "nc2wh", "nc3")


@dataclass
class NCReport:
    nc1: float | None = None
    nc2w: float | None = None
    nc2h: float | None = None
    nc2wh: float | None = None
    nc3: float | None = None
    flags: list[str] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)

    def values(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in FIELDS}

    def max_value(self) -> float | None:
        vals = [v for v in self.values().values() if v is not None]
        return max(vals) if vals else None


@dataclass(frozen=True)
class ClassStats:
    means: np.ndarray
    global_mean: np.ndarray
    sigma_w: np.ndarray
    sigma_b: np.ndarray


def class_stats(h: np.ndarray, spec: ImbalanceSpec) -> ClassStats:
    bounds = np.concatenate([[0], np.cumsum(spec.counts)])
    d = h.shape[0]
    means = np.empty((d, spec.K))
    sigma_w = np.zeros((d, d))
    for k in range(spec.K):
        block = h[:, bounds[k]:bounds[k + 1]]
        if np.all(block == block[:, :1]):
            means[:, k] = block[:, 0]  # exact replication: exact zero spread
            continue
        means[:, k] = block.mean(axis=1)
        dev = block - means[:, k:k + 1]
        sigma_w += dev @ dev.T
    sigma_w /= spec.N
    global_mean = h.mean(axis=1)
    centred = means - global_mean[:, None]
    sigma_b = centred @ centred.T / spec.K
    return ClassStats(means, global_mean, sigma_w, sigma_b)


def nc1(h: np.ndarray, spec: ImbalanceSpec, rel_tol: float = DEFAULT_PINV_RTOL) -> float | None:
    """``tr(Sigma_W pinv(Sigma_B)) / K``; ``None`` when ``Sigma_B`` vanishes."""
    st = class_stats(h, spec)
    if np.linalg.norm(st.sigma_b) <= DEGENERATE_TOL:
        return None
    # both factors are PSD; clamp rounding below zero
    return max(0.0, float(np.trace(st.sigma_w @ pinv(st.sigma_b, rel_tol)) / spec.K))


def _normalized_gap(actual, actual_norm, target, name, flags) -> float | None:
    tn = np.linalg.norm(target)
    if actual_norm <= DEGENERATE_TOL:
        flags.append(f"{name}: measured matrix is zero")
        return None
    if tn <= DEGENERATE_TOL:
        flags.append(f"{name}: predicted matrix is zero (all directions thresholded)")
        return None
    return float(np.linalg.norm(actual / actual_norm - target / tn))


def _column_alignment(w_cols, g_cols, active, flags) -> tuple[float, list[int]]:
    total = 0.0
    skipped = []
    for i in range(w_cols.shape[1]):
        if not active[i]:
            skipped.append(i)
            continue
        wn = np.linalg.norm(w_cols[:, i])
        gn = np.linalg.norm(g_cols[:, i])
        if wn <= DEGENERATE_TOL and gn <= DEGENERATE_TOL:
            flags.append(f"nc3: column {i} predicted active but both sides vanish")
            continue
        if wn <= DEGENERATE_TOL or gn <= DEGENERATE_TOL:
            flags.append(f"nc3: column {i} inconsistent, only one side vanishes")
        wu = w_cols[:, i] / wn if wn > DEGENERATE_TOL else 0.0
        gu = g_cols[:, i] / gn if gn > DEGENERATE_TOL else 0.0
        total += float(np.sum((wu - gu) ** 2))
    return float(np.sqrt(total)), skipped


def nc2_suite(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution, flags=None):
    """``(nc2w, nc2h, nc2wh)`` in the SVD basis of ``Y_hat`` (biased model)."""
    flags = [] if flags is None else flags
    u, v = sol.u_hat, sol.v_hat
    kappa = np.diag(sol.kappa)
    prod = p.product()
    e_bar = _class_means(p, la) @ la.d

    ww = prod @ prod.T
    nc2w = _normalized_gap(u.T @ ww @ u, np.linalg.norm(ww),
                           np.linalg.matrix_power(sol.upsilon1, sol.L), "nc2w", flags)
    ee = e_bar.T @ e_bar
    nc2h = _normalized_gap(v.T @ ee @ v, np.linalg.norm(ee),
                           sol.upsilon2 @ kappa @ kappa, "nc2h", flags)
    we = prod @ e_bar
    nc2wh = _normalized_gap(u.T @ we @ v, np.linalg.norm(we), sol.upsilon_wh @ kappa, "nc2wh", flags)
    return nc2w, nc2h, nc2wh


def nc3(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution, flags=None, skipped=None) -> float:
    """Alignment of rows of ``U^T W_L..W_1`` with columns of ``H_bar D V``.

    Directions the solution predicts inactive are skipped.
    """
    flags = [] if flags is None else flags
    w_cols = (sol.u_hat.T @ p.product()).T
    g_cols = _class_means(p, la) @ la.d @ sol.v_hat
    val, sk = _column_alignment(w_cols, g_cols, sol.active, flags)
    if skipped is not None:
        skipped.extend(sk)
    return val


def _class_means(p: ModelParams, la: LabelAlgebra) -> np.ndarray:
    return class_stats(p.h, la.spec).means


def _class_order(sol: AnalyticSolution, diag: np.ndarray) -> np.ndarray:
    return sol.u_hat @ diag @ sol.u_hat.T


def nc_biasfree_suite(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution) -> NCReport:
    """Metrics for the bias-free model, in class order without SVD conjugation."""
    rep = NCReport()
    rep.nc1 = nc1(p.h, la.spec)
    if rep.nc1 is None:
        rep.flags.append("nc1: between-class covariance vanishes")
    prod = p.product()
    h_bar = _class_means(p, la)
    ww = prod @ prod.T
    rep.nc2w = _normalized_gap(ww, np.linalg.norm(ww),
                               _class_order(sol, np.linalg.matrix_power(sol.upsilon1, sol.L)),
                               "nc2w", rep.flags)
    hh = h_bar.T @ h_bar
    rep.nc2h = _normalized_gap(hh, np.linalg.norm(hh), _class_order(sol, sol.upsilon2), "nc2h", rep.flags)
    wh = prod @ h_bar
    rep.nc2wh = _normalized_gap(wh, np.linalg.norm(wh), _class_order(sol, sol.upsilon_wh), "nc2wh", rep.flags)
    active_class = np.any(sol.u_hat[:, sol.active] != 0, axis=1)
    rep.nc3, rep.skipped = _column_alignment(prod.T, h_bar, active_class, rep.flags)
    if not np.any(active_class):
        rep.nc3 = None
        rep.flags.append("nc3: no active class")
    return rep


def nc_bias_suite(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution) -> NCReport:
    rep = NCReport()
    rep.nc1 = nc1(p.h, la.spec)
    if rep.nc1 is None:
        rep.flags.append("nc1: between-class covariance vanishes")
    rep.nc2w, rep.nc2h, rep.nc2wh = nc2_suite(p, la, sol, rep.flags)
    rep.nc3 = nc3(p, la, sol, rep.flags, rep.skipped)
    if sol.all_inactive:
        rep.nc3 = None
        rep.flags.append("nc3: no active direction")
    return rep


def nc_report(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution) -> NCReport:
    if p.bias:
        return nc_bias_suite(p, la, sol)
    return nc_biasfree_suite(p, la, sol)
