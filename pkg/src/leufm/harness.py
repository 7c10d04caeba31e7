"""Experiment orchestration: theory-vs-training comparisons and sweeps."""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .analytic import AnalyticSolution, identity_residuals, solve
from .imbalance import ImbalanceSpec, label_algebra
from .linalg import read_matrix, write_matrix
from .metrics import FIELDS
from .model import Dims, RegParams, save_params
from .trainer import EpochRecord, TrainConfig, train

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "objective", "grad_norm", *FIELDS, "accuracy"]
SWEEP_AXES = ("lambda", "imbalance-ratio", "L")

DEFAULT_TOLERANCES = {
    "objective_rel": 1e-6,
    "bias_inf": 1e-3,
    "products": 1e-3,
    "nc1": 1e-3,
    "nc": 1e-2,
    "below_fstar": 1e-6,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    counts: list[int]
    lambda_w: list[float]
    lambda_h: float
    dims: list[int]
    mode: str = "bias"
    train: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def L(self) -> int:
        return len(self.lambda_w)

    @property
    def bias(self) -> bool:
        return self.mode == "bias"

    def validate(self) -> None:
        if self.mode not in ("bias", "bias-free"):
            raise ConfigError(f"mode must be 'bias' or 'bias-free', got {self.mode!r}")
        if not isinstance(self.lambda_w, (list, tuple)) or not isinstance(self.dims, (list, tuple)):
            raise ConfigError("lambda_w and dims must be lists with one entry per layer")
        if len(self.lambda_w) != len(self.dims):
            raise ConfigError(
                f"{len(self.lambda_w)} weight decays but {len(self.dims)} layer widths"
            )
        try:
            self.spec()
            self.reg()
            self.dims_obj()
            self.train_config()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerances: {sorted(unknown)}")

    def spec(self) -> ImbalanceSpec:
        return ImbalanceSpec(tuple(self.counts))

    def reg(self) -> RegParams:
        return RegParams(tuple(self.lambda_w), float(self.lambda_h))

    def dims_obj(self) -> Dims:
        return Dims(tuple(self.dims), len(self.counts))

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.train)
        except TypeError as exc:
            raise ConfigError(f"bad train section: {exc}") from None

    def tol(self) -> dict:
        return {**DEFAULT_TOLERANCES, **self.tolerances}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "layers" in data:
            layers = int(data.pop("layers"))
            for key in ("lambda_w", "dims"):
                if key in data and isinstance(data[key], (list, tuple)) and len(data[key]) != layers:
                    raise ConfigError(f"layers={layers} but {key} has {len(data[key])} entries")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        missing = {"counts", "lambda_w", "lambda_h", "dims"} - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


@dataclass
class ComparisonReport:
    f_star: float
    f_trained: float
    objective_abs_gap: float
    objective_rel_gap: float
    b_deviation: float | None
    product_deviations: dict[str, float]
    nc: dict[str, float | None]
    nc_flags: list[str]
    accuracy: float
    epochs: int
    converged: bool
    sigma_star: list[float]
    tolerances: dict[str, float]
    checks: dict[str, bool] = field(default_factory=dict)
    passed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(report: dict, tolerances: dict) -> dict[str, bool]:
    """Per-check verdicts from recorded deviations alone."""
    tol = {**DEFAULT_TOLERANCES, **tolerances}
    checks = {
        "objective": report["objective_rel_gap"] <= tol["objective_rel"],
        "not_below_fstar": report["f_trained"] >= report["f_star"] - tol["below_fstar"],
        "products": all(v <= tol["products"] for v in report["product_deviations"].values()),
    }
    if report.get("b_deviation") is not None:
        checks["bias"] = report["b_deviation"] <= tol["bias_inf"]
    nc = report["nc"]
    if nc.get("nc1") is not None:
        checks["nc1"] = nc["nc1"] <= tol["nc1"]
    for key in FIELDS[1:]:
        if nc.get(key) is not None:
            checks[key] = nc[key] <= tol["nc"]
    return checks


def _fmt(x) -> str:
    return "nan" if x is None else f"{x:.17g}"


def record_row(rec: EpochRecord) -> list[str]:
    vals = rec.nc.values()
    return [str(rec.epoch), _fmt(rec.objective), _fmt(rec.grad_norm),
            *(_fmt(vals[k]) for k in FIELDS), _fmt(rec.accuracy)]


class MetricsWriter:
    """Streams epoch records to ``metrics.csv``."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRICS_HEADER)

    def __call__(self, rec: EpochRecord) -> None:
        self._w.writerow(record_row(rec))

    def close(self):
        self._fh.close()


def write_solution(sol: AnalyticSolution, out_dir) -> None:
    """Export predicted quantities and canonical parameters as CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "sigma_star.csv", sol.sigma_star.reshape(-1, 1))
    write_matrix(out / "sigma_w.csv", sol.sigma_w.reshape(-1, 1))
    write_matrix(out / "kappa.csv", sol.kappa.reshape(-1, 1))
    write_matrix(out / "upsilon1.csv", sol.upsilon1)
    write_matrix(out / "upsilon2.csv", sol.upsilon2)
    write_matrix(out / "U_hat.csv", sol.u_hat)
    write_matrix(out / "V_hat.csv", sol.v_hat)
    for name, mat in sol.products.items():
        write_matrix(out / f"product_{name}.csv", mat)
    if sol.b_star is not None:
        write_matrix(out / "b_star.csv", sol.b_star.reshape(-1, 1))
    save_params(sol.canonical_params, out / "params")
    summary = {
        "f_star": sol.f_star,
        "f_closed_form": sol.f_closed,
        "L": sol.L,
        "bias": sol.bias,
        "c": sol.c,
        "r": sol.r,
        "active": [bool(a) for a in sol.active],
        "rank_limited": sol.rank_limited,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def _report_text(rep: ComparisonReport) -> str:
    lines = [
        f"f_star            {rep.f_star:.17g}",
        f"f_trained         {rep.f_trained:.17g}",
        f"objective gap     abs {rep.objective_abs_gap:.3e}  rel {rep.objective_rel_gap:.3e}",
    ]
    if rep.b_deviation is not None:
        lines.append(f"bias deviation    {rep.b_deviation:.3e}")
    for k, v in rep.product_deviations.items():
        lines.append(f"product {k:<9} {v:.3e}")
    for k, v in rep.nc.items():
        lines.append(f"{k:<17} {'n/a' if v is None else f'{v:.3e}'}")
    lines.append(f"accuracy          {rep.accuracy:.4f}")
    lines.append(f"epochs            {rep.epochs} ({'converged' if rep.converged else 'max epochs'})")
    for flag in rep.nc_flags:
        lines.append(f"flag: {flag}")
    for k, ok in rep.checks.items():
        lines.append(f"check {k:<12} {'PASS' if ok else 'FAIL'}")
    lines.append(f"verdict           {'PASS' if rep.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, h_init: np.ndarray | None = None) -> ComparisonReport:
    """Solve analytically, train, and compare.

    When ``cfg.out`` is set, the run directory receives ``config.yaml``,
    ``metrics.csv``, ``report.json``, ``report.txt``, the trained parameters
    and the analytic solution.
    """
    spec, reg, dims = cfg.spec(), cfg.reg(), cfg.dims_obj()
    la = label_algebra(spec)
    sol = solve(spec, reg, dims, bias=cfg.bias, la=la)

    out = Path(cfg.out) if cfg.out else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.yaml")
        writer = MetricsWriter(out / "metrics.csv")
    try:
        traj = train(cfg.train_config(), spec, reg, dims, bias=cfg.bias, la=la,
                     solution=sol, h_init=h_init, callback=writer)
    finally:
        if writer is not None:
            writer.close()

    final = traj.records[-1]
    f_star = sol.f_star
    gap = traj.final_objective - f_star
    b_dev = None
    if cfg.bias:
        b_dev = float(np.max(np.abs(traj.params.b - sol.b_star)))
    rep = ComparisonReport(
        f_star=f_star,
        f_trained=traj.final_objective,
        objective_abs_gap=abs(gap),
        objective_rel_gap=abs(gap) / abs(f_star),
        b_deviation=b_dev,
        product_deviations=identity_residuals(traj.params, la, sol),
        nc=final.nc.values(),
        nc_flags=list(final.nc.flags),
        accuracy=final.accuracy,
        epochs=traj.epochs,
        converged=traj.converged,
        sigma_star=[float(s) for s in sol.sigma_star],
        tolerances=cfg.tol(),
    )
    rep.checks = evaluate(rep.to_dict(), rep.tolerances)
    rep.passed = all(rep.checks.values())

    if out is not None:
        (out / "report.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
        (out / "report.txt").write_text(_report_text(rep))
        save_params(traj.params, out / "params")
        write_solution(sol, out / "analytic")
    return rep


def verdict_from_file(path) -> bool:
    """Recompute the pass verdict of a stored ``report.json``."""
    data = json.loads(Path(path).read_text())
    return all(evaluate(data, data["tolerances"]).values())


def long_tail_counts(n_max: int, K: int, ratio: float) -> list[int]:
    """Exponential profile ``n_k = n_max * ratio^(-k/(K-1))``, at least 1."""
    if ratio < 1:
        raise ValueError("imbalance ratio must be >= 1")
    return [max(1, int(round(n_max * ratio ** (-k / (K - 1))))) for k in range(K)]


def _apply_axis(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    data = copy.deepcopy(base.to_dict())
    if axis == "lambda":
        data["lambda_w"] = [float(value)] * base.L
        data["lambda_h"] = float(value)
    elif axis == "imbalance-ratio":
        data["counts"] = long_tail_counts(max(base.counts), len(base.counts), float(value))
    elif axis == "L":
        L = int(value)
        data["lambda_w"] = [base.lambda_w[0]] * L
        data["dims"] = [base.dims[0]] * L
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return ExperimentConfig.from_dict(data)


SWEEP_COLUMNS = [
    "axis", "value", "status", "error", "passed", "f_star", "f_trained", "objective_rel_gap",
    "b_deviation", "max_product_deviation", *FIELDS, "accuracy", "sigma_star_max", "n_active", "epochs",
]


def _sweep_one(base: ExperimentConfig, axis: str, value, out_dir: str | None) -> dict:
    row = {k: "" for k in SWEEP_COLUMNS}
    row.update(axis=axis, value=value)
    try:
        cfg = _apply_axis(base, axis, value)
        cfg.out = out_dir
        rep = run_experiment(cfg)
    except Exception as exc:  # recorded per row; the sweep continues
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        status="ok", passed=rep.passed, f_star=rep.f_star, f_trained=rep.f_trained,
        objective_rel_gap=rep.objective_rel_gap,
        b_deviation="" if rep.b_deviation is None else rep.b_deviation,
        max_product_deviation=max(rep.product_deviations.values()),
        accuracy=rep.accuracy, sigma_star_max=max(rep.sigma_star),
        n_active=sum(s > 0 for s in rep.sigma_star), epochs=rep.epochs,
    )
    row.update({k: ("" if v is None else v) for k, v in rep.nc.items()})
    return row


def sweep(base: ExperimentConfig, axis: str, values, out_dir=None, jobs: int = 1) -> list[dict]:
    """One comparison per value along ``axis``; failures become error rows.

    Each run gets its own subdirectory of ``out_dir``; the aggregate table
    is written to ``out_dir/sweep.csv``.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    dirs = [None] * len(values)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        dirs = [str(Path(out_dir) / f"{axis}_{i:03d}") for i in range(len(values))]
    if jobs > 1 and len(values) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_one, [base] * len(values), [axis] * len(values), values, dirs))
    else:
        rows = [_sweep_one(base, axis, v, d) for v, d in zip(values, dirs)]
    if out_dir is not None:
        with open(Path(out_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def import_features(path, spec: ImbalanceSpec, d0: int | None = None) -> np.ndarray:
    """Load a ``d0 x N`` feature matrix to seed training."""
    h = read_matrix(path)
    if h.shape[1] != spec.N:
        raise ValueError(f"{path}: features have {h.shape[1]} columns, expected N={spec.N}")
    if d0 is not None and h.shape[0] != d0:
        raise ValueError(f"{path}: features have {h.shape[0]} rows, expected d0={d0}")
    return h

