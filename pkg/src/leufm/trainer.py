"""Deterministic full-batch training of the unconstrained feature model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analytic import AnalyticSolution, solve
from .imbalance import ImbalanceSpec, LabelAlgebra, label_algebra
from .metrics import NCReport, nc_report
from .model import Dims, ModelParams, RegParams, gradients, objective, predict_accuracy

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "gd")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    max_epochs: int = 12000
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_tol: float = 1e-8
    seed: int = 0
    init_scale: float = 1.0
    log_every: int = 100

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    grad_norm: float
    nc: NCReport
    accuracy: float


@dataclass
class TrainTrajectory:
    records: list[EpochRecord]
    params: ModelParams
    epochs: int
    converged: bool
    final_objective: float
    final_grad_norm: float
    solution: AnalyticSolution | None = field(default=None, repr=False)


def init_params(dims: Dims, spec: ImbalanceSpec, seed: int, bias: bool = True, scale: float = 1.0) -> ModelParams:
    """Uniform init: ``W_j ~ U(-s, s)`` with ``s = scale / sqrt(fan_in)``; ``b = 0``."""
    rng = np.random.default_rng(seed)
    weights = []
    for rows, cols in dims.layer_shapes():
        s = scale / math.sqrt(cols)
        weights.append(rng.uniform(-s, s, size=(rows, cols)))
    s = scale / math.sqrt(dims.d[0])
    h = rng.uniform(-s, s, size=(dims.d[0], spec.N))
    b = np.zeros(spec.K) if bias else None
    return ModelParams(weights, h, b)


class _Adam:
    def __init__(self, cfg: TrainConfig, arrays):
        self.cfg = cfg
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            a -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


class _GD:
    def __init__(self, cfg: TrainConfig, arrays):
        self.lr = cfg.lr

    def step(self, arrays, grads):
        for a, g in zip(arrays, grads):
            a -= self.lr * g


def train(
    config: TrainConfig,
    spec: ImbalanceSpec,
    reg: RegParams,
    dims: Dims,
    bias: bool = True,
    *,
    la: LabelAlgebra | None = None,
    solution: AnalyticSolution | None = None,
    h_init: np.ndarray | None = None,
    callback: Callable[[EpochRecord], None] | None = None,
) -> TrainTrajectory:
    """Run full-batch training until ``grad_tol`` or ``max_epochs``.

    Metrics are evaluated against ``solution`` (solved here when omitted)
    at epoch 1, every ``log_every`` epochs and at the final epoch.
    """
    la = la or label_algebra(spec)
    sol = solution or solve(spec, reg, dims, bias=bias, la=la)
    p = init_params(dims, spec, config.seed, bias=bias, scale=config.init_scale)
    if h_init is not None:
        if h_init.shape != p.h.shape:
            raise ValueError(f"initial features have shape {h_init.shape}, expected {p.h.shape}")
        p.h = np.array(h_init, dtype=np.float64)
    arrays = p.arrays()
    opt = (_Adam if config.optimizer == "adam" else _GD)(config, arrays)

    records: list[EpochRecord] = []

    def _log(epoch, f, gn):
        rec = EpochRecord(epoch, f, gn, nc_report(p, la, sol), predict_accuracy(p, la))
        records.append(rec)
        if callback is not None:
            callback(rec)

    f0 = objective(p, la, reg)
    limit = 1e6 * max(f0, 1e-12)
    converged = False
    epoch = 0
    f, gn = f0, math.inf
    for epoch in range(1, config.max_epochs + 1):
        g = gradients(p, la, reg)
        gn = g.inf_norm()
        if gn <= config.grad_tol:
            converged = True
            _log(epoch, f, gn)
            break
        opt.step(arrays, g.arrays())
        f = objective(p, la, reg)
        if not math.isfinite(f) or f > limit:
            raise DivergenceError(f"diverged at epoch {epoch} (objective {f:.3g}); reduce lr")
        if epoch == 1 or epoch % config.log_every == 0 or epoch == config.max_epochs:
            _log(epoch, f, gn)
    final_gn = gradients(p, la, reg).inf_norm()
    log.debug("training stopped at epoch %d, objective %.17g, grad %.3g", epoch, f, final_gn)
    return TrainTrajectory(records, p, epoch, converged, f, final_gn, sol)
