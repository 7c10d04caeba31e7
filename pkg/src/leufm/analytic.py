"""Closed-form global minimizers of the (L-layer) unconstrained feature model.

All solvers work in the SVD basis of the effective target: ``Y_hat =
(I - n 1^T/N) D`` in the biased model, ``D = diag(sqrt n)`` in the bias-free
one.  Writing ``kappa`` for its singular values, every minimizer is described
by one scalar ``sigma_k`` per direction, chosen by a separable 1-D problem, and
a free orthonormal frame which is fixed here to identity embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imbalance import ImbalanceSpec, LabelAlgebra, label_algebra, target_bias
from .linalg import SvdFactors, orthonormal_embed, svd_desc
from .model import Dims, ModelParams, RegParams, objective


@dataclass
class AnalyticSolution:
    """Predicted optimum for one problem instance.

    ``sigma_star`` follows the solver's own parametrization: singular values
    of the weighted class-mean matrix ``H_bar D`` for the one-layer solvers,
    singular values of ``W_1`` for the deep solver.  ``sigma_w`` always holds
    the singular values of ``W_1`` and is what ``upsilon1``/``upsilon2`` are
    built from, so metrics can treat every depth alike.

    ``upsilon_wh`` is the diagonal with ``sigma_w^{2L} / (c sigma_w^{2L} +
    N lambda_H)``; ``U^T W_L..W_1 H_bar D V = c * upsilon_wh * kappa``.
    """

    bias: bool
    L: int
    N: int
    c: float
    r: int
    kappa: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray
    sigma_star: np.ndarray
    sigma_w: np.ndarray
    active: np.ndarray
    upsilon1: np.ndarray
    upsilon2: np.ndarray
    upsilon_wh: np.ndarray
    b_star: np.ndarray | None
    canonical_params: ModelParams
    f_star: float = math.nan
    f_closed: float = math.nan
    rank_limited: bool = False
    products: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def all_inactive(self) -> bool:
        return not bool(np.any(self.active))


# ---------------------------------------------------------------------------
# scalar subproblems


def sigma_star_scalar(kappa_sq: float, N: int, lw: float, lh: float) -> float:
    """Minimizer over sigma >= 0 of

        kappa^2 lw / (2 (sigma^2 + N lw)) + lh/2 (sigma^2 + N lw)
    """
    if lh * lw <= kappa_sq / N**2:
        return math.sqrt(max(math.sqrt(kappa_sq * lw / lh) - N * lw, 0.0))
    return 0.0


def gmin_threshold(L: int) -> float:
    return (L - 1) ** ((L - 1) / L) / L


def _g_slope(x: float, L: int) -> float:
    return L * x ** (L - 1) / (x**L + 1) ** 2


def gmin_scalar(alpha: float, L: int) -> float:
    """Global minimizer of ``g(x) = 1/(x^L + 1) + alpha x`` over ``x >= 0``.

    Zero when ``alpha`` is at or above ``(L-1)^((L-1)/L) / L``; otherwise the
    largest root of ``alpha = L x^(L-1) / (x^L + 1)^2``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if L < 2:
        raise ValueError("L must be >= 2")
    if alpha >= gmin_threshold(L):
        return 0.0
    lo = ((L - 1) / (L + 1)) ** (1.0 / L)  # maximizer of the slope
    hi = max(1.0, 2.0 * lo)
    while _g_slope(hi, L) >= alpha:
        hi *= 2.0
    # bisect to machine precision: slope > alpha left of the root
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if _g_slope(mid, L) > alpha:
            lo = mid
        else:
            hi = mid
    return hi if abs(_g_slope(hi, L) - alpha) < abs(_g_slope(lo, L) - alpha) else lo


# ---------------------------------------------------------------------------
# helpers shared by the solvers


def _upsilons(sigma_w: np.ndarray, c: float, L: int, N: int, lh: float):
    s2L = sigma_w ** (2 * L)
    q = c * s2L + N * lh
    return np.diag(sigma_w**2), np.diag(s2L / q**2), np.diag(s2L / q)


def _replicate(h_bar: np.ndarray, spec: ImbalanceSpec) -> np.ndarray:
    return h_bar[:, spec.labels]


def _predicted_products(sol: AnalyticSolution, lambda_w) -> dict[str, np.ndarray]:
    c, L = sol.c, sol.L
    kappa = np.diag(sol.kappa)
    return {
        "UWLWLU": lambda_w[0] / lambda_w[-1] * sol.upsilon1,
        "UWWU": c * np.linalg.matrix_power(sol.upsilon1, L),
        "VEEV": c * sol.upsilon2 @ kappa @ kappa,
        "UWEV": c * sol.upsilon_wh @ kappa,
    }


def _finish(sol: AnalyticSolution, la: LabelAlgebra, reg: RegParams, f_closed: float) -> AnalyticSolution:
    sol.f_star = objective(sol.canonical_params, la, reg)
    sol.f_closed = f_closed
    sol.products = _predicted_products(sol, reg.lambda_w)
    return sol


def _rank(dims_d, K: int) -> int:
    return min(K, *dims_d)


# ---------------------------------------------------------------------------
# one-layer solvers


def _solve_one_layer(spec, reg, d0, bias, la=None) -> AnalyticSolution:
    if reg.L != 1:
        raise ValueError("one-layer solver needs exactly one weight decay")
    la = la or label_algebra(spec)
    K, N = spec.K, spec.N
    lw, lh = reg.lambda_w[0], reg.lambda_h
    f: SvdFactors = la.target_svd(bias)
    kappa = f.s
    r = _rank((d0,), K)

    sigma = np.array([sigma_star_scalar(k * k, N, lw, lh) for k in kappa])
    rank_limited = bool(np.any(sigma[r:] > 0))
    sigma[r:] = 0.0
    active = sigma > 0

    shrink = sigma / (sigma**2 + N * lw)
    sigma_w = kappa * shrink  # singular values of W
    R = orthonormal_embed(r, d0)
    d_inv = np.diag(1.0 / np.sqrt(spec.n))
    W = (f.u[:, :r] * (kappa[:r] * shrink[:r])) @ R.T
    h_bar = (R * sigma[:r]) @ f.v[:, :r].T @ d_inv
    b = target_bias(spec) if bias else None
    params = ModelParams([W], _replicate(h_bar, spec), b)

    u1, u2, uwh = _upsilons(sigma_w, 1.0, 1, N, lh)
    sol = AnalyticSolution(
        bias=bias, L=1, N=N, c=1.0, r=r, kappa=kappa, u_hat=f.u, v_hat=f.v,
        sigma_star=sigma, sigma_w=sigma_w, active=active,
        upsilon1=u1, upsilon2=u2, upsilon_wh=uwh, b_star=b,
        canonical_params=params, rank_limited=rank_limited,
    )
    f_closed = float(np.sum(kappa**2 * lw / (2 * (sigma**2 + N * lw)) + 0.5 * lh * sigma**2))
    return _finish(sol, la, reg, f_closed)


def solve_biasfree_ufm(spec: ImbalanceSpec, reg: RegParams, d0: int, la: LabelAlgebra | None = None) -> AnalyticSolution:
    """Global minimizer of ``1/(2N)||WH - Y||^2 + lw/2 ||W||^2 + lh/2 ||H||^2``.

    If ``d0 < K`` only the ``d0`` largest classes can be active;
    ``rank_limited`` is set when that cut removes a direction that would
    otherwise survive the threshold.
    """
    return _solve_one_layer(spec, reg, d0, bias=False, la=la)


def solve_bias_ufm(spec: ImbalanceSpec, reg: RegParams, d0: int, la: LabelAlgebra | None = None) -> AnalyticSolution:
    """Global minimizer of the one-layer model with an unregularized bias.

    The bias is ``n/N`` and the rest solves the bias-free problem with target
    ``Y_hat``: in its SVD basis the product ``W H_bar D`` is the singular
    value soft-threshold of ``Y_hat`` at ``N sqrt(lw lh)``.
    """
    return _solve_one_layer(spec, reg, d0, bias=True, la=la)


# ---------------------------------------------------------------------------
# L-layer solver


def layer_constant(lambda_w) -> float:
    """``c = lambda_1^(L-1) / (lambda_L ... lambda_2)``."""
    lw = list(lambda_w)
    return lw[0] ** (len(lw) - 1) / math.prod(lw[1:])


def deep_alpha(kappa_sq: float, N: int, reg: RegParams) -> float:
    L = reg.L
    scale = (N * math.prod(reg.lambda_w) * reg.lambda_h) ** (1.0 / L)
    return L * N / kappa_sq * scale


def solve_deep(
    spec: ImbalanceSpec,
    reg: RegParams,
    dims: Dims,
    bias: bool = True,
    la: LabelAlgebra | None = None,
) -> AnalyticSolution:
    """Global minimizer of the L-layer model (biased unless ``bias=False``).

    ``L = 1`` is routed to the one-layer solvers.
    """
    if reg.L != dims.L:
        raise ValueError(f"{reg.L} weight decays for {dims.L} layers")
    if dims.K != spec.K:
        raise ValueError("dims.K does not match the number of classes")
    if reg.L == 1:
        solver = solve_bias_ufm if bias else solve_biasfree_ufm
        return solver(spec, reg, dims.d[0], la=la)

    la = la or label_algebra(spec)
    L, K, N = reg.L, spec.K, spec.N
    lw, lh = reg.lambda_w, reg.lambda_h
    f = la.target_svd(bias)
    kappa = f.s
    r = dims.r
    c = layer_constant(lw)

    sigma_w = np.zeros(K)
    scale = (N * lh / c) ** (1.0 / L)
    for k in range(K):
        if kappa[k] <= 0:
            continue
        x = gmin_scalar(deep_alpha(kappa[k] ** 2, N, reg), L)
        sigma_w[k] = math.sqrt(scale * x)
    rank_limited = bool(np.any(sigma_w[r:] > 0))
    sigma_w[r:] = 0.0
    active = sigma_w > 0

    s = sigma_w[:r]
    frames = [orthonormal_embed(r, w) for w in dims.d]  # U_0 .. U_{L-1}
    weights = []
    for j in range(L):
        left = frames[j + 1] if j + 1 < L else f.u[:, :r]
        sj = math.sqrt(lw[0] / lw[j]) * s
        weights.append((left * sj) @ frames[j].T)
    s2L = s ** (2 * L)
    e_coef = math.sqrt(c) * s**L / (c * s2L + N * lh) * kappa[:r]
    e_bar = (frames[0] * e_coef) @ f.v[:, :r].T
    h_bar = e_bar @ np.diag(1.0 / np.sqrt(spec.n))
    b = target_bias(spec) if bias else None
    params = ModelParams(weights, _replicate(h_bar, spec), b)

    u1, u2, uwh = _upsilons(sigma_w, c, L, N, lh)
    sol = AnalyticSolution(
        bias=bias, L=L, N=N, c=c, r=r, kappa=kappa, u_hat=f.u, v_hat=f.v,
        sigma_star=sigma_w.copy(), sigma_w=sigma_w, active=active,
        upsilon1=u1, upsilon2=u2, upsilon_wh=uwh, b_star=b,
        canonical_params=params, rank_limited=rank_limited,
    )
    sw2L = sigma_w ** (2 * L)
    f_closed = float(0.5 * np.sum(lh * kappa**2 / (c * sw2L + N * lh) + L * lw[0] * sigma_w**2))
    return _finish(sol, la, reg, f_closed)


def solve(spec: ImbalanceSpec, reg: RegParams, dims: Dims, bias: bool = True, la=None) -> AnalyticSolution:
    return solve_deep(spec, reg, dims, bias=bias, la=la)


# ---------------------------------------------------------------------------
# identities and objective


def measured_products(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution) -> dict[str, np.ndarray]:
    """The four conjugated products of ``p`` in the target's SVD basis."""
    from .model import class_means

    u, v = sol.u_hat, sol.v_hat
    prod = p.product()
    e_bar = class_means(p.h, la.spec.counts) @ la.d
    wl = p.weights[-1]
    return {
        "UWLWLU": u.T @ wl @ wl.T @ u,
        "UWWU": u.T @ prod @ prod.T @ u,
        "VEEV": v.T @ e_bar.T @ e_bar @ v,
        "UWEV": u.T @ prod @ e_bar @ v,
    }


def identity_residuals(p: ModelParams, la: LabelAlgebra, sol: AnalyticSolution) -> dict[str, float]:
    """Frobenius gaps between measured and predicted products."""
    got = measured_products(p, la, sol)
    return {k: float(np.linalg.norm(got[k] - sol.products[k])) for k in sol.products}


def optimal_objective(sol: AnalyticSolution, spec: ImbalanceSpec, reg: RegParams, la=None) -> float:
    """Objective at the canonical minimizer, evaluated directly.

    ``sol.f_closed`` holds the separable closed-form sum for comparison.
    """
    la = la or label_algebra(spec)
    return objective(sol.canonical_params, la, reg)


def nuclear_factorize(z, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Balanced factorization ``z = W E`` attaining

        ||z||_* = 1/2 (||W||_F^2 / alpha + alpha ||E||_F^2).

    ``W = alpha^(1/2) U S^(1/2)``, ``E = alpha^(-1/2) S^(1/2) V^T``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    f = svd_desc(z)
    root = np.sqrt(f.s)
    w = math.sqrt(alpha) * f.u * root
    e = (root[:, None] * f.v.T) / math.sqrt(alpha)
    return w, e
