"""Command-line entry point: ``leufm {solve,train,metrics,spectra,compare,sweep}``.

Exit codes: 0 pass, 1 tolerance failure, 2 usage or config error,
3 numerical error.  ``LEUFM_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .analytic import solve
from .harness import (
    SWEEP_AXES, ConfigError, ExperimentConfig, MetricsWriter, import_features, run_experiment,
    sweep, write_solution,
)
from .imbalance import label_algebra, parse_counts
from .metrics import FIELDS, nc_report
from .model import Dims, RegParams, load_params, predict_accuracy, save_params
from .spectral import full_spectrum
from .trainer import DivergenceError, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("leufm")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config; flags override it")
    p.add_argument("--counts", help="class counts, e.g. 8,8,2,2")
    p.add_argument("--layers", type=int, help="number of linear layers L")
    p.add_argument("--lambda-w", help="weight decays, one per layer (comma separated)")
    p.add_argument("--lambda-h", type=float, help="feature decay")
    p.add_argument("--dims", help="widths d_0..d_{L-1} (comma separated)")
    p.add_argument("--mode", choices=["bias", "bias-free"])


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int, dest="max_epochs")
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=["adam", "gd"])
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--log-every", type=int)


def _build_config(args) -> ExperimentConfig:
    data: dict = {}
    if getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config)
        data = cfg.to_dict()
    if args.counts:
        data["counts"] = list(parse_counts(args.counts).counts)
    if args.lambda_w:
        data["lambda_w"] = _floats(args.lambda_w)
    if args.lambda_h is not None:
        data["lambda_h"] = args.lambda_h
    if args.dims:
        data["dims"] = _ints(args.dims)
    if args.mode:
        data["mode"] = args.mode
    if args.layers is not None:
        data["layers"] = args.layers
    train_cfg = dict(data.get("train") or {})
    for key in ("lr", "max_epochs", "seed", "optimizer", "grad_tol", "log_every"):
        val = getattr(args, key, None)
        if val is not None:
            train_cfg[key] = val
    data["train"] = train_cfg
    if getattr(args, "out", None):
        data["out"] = args.out
    return ExperimentConfig.from_dict(data)


def cmd_solve(args) -> int:
    cfg = _build_config(args)
    spec = cfg.spec()
    sol = solve(spec, cfg.reg(), cfg.dims_obj(), bias=cfg.bias)
    out = Path(args.out or "solution")
    write_solution(sol, out)
    print(f"f_star={sol.f_star:.17g} active={int(np.sum(sol.active))}/{spec.K} -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _build_config(args)
    spec = cfg.spec()
    h0 = import_features(args.features, spec, cfg.dims[0]) if args.features else None
    out = Path(args.out or "train_run")
    out.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(out / "metrics.csv")
    try:
        traj = train(cfg.train_config(), spec, cfg.reg(), cfg.dims_obj(), bias=cfg.bias,
                     h_init=h0, callback=writer)
    finally:
        writer.close()
    save_params(traj.params, out / "params")
    cfg.out = str(out)
    cfg.dump(out / "config.yaml")
    print(f"epochs={traj.epochs} objective={traj.final_objective:.17g} "
          f"f_star={traj.solution.f_star:.17g} grad={traj.final_grad_norm:.3e}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    params = load_params(args.params)
    spec = parse_counts(args.counts)
    la = label_algebra(spec)
    lw = _floats(args.lambda_w)
    if len(lw) != params.L:
        raise ConfigError(f"{len(lw)} weight decays for {params.L} layers")
    dims = Dims(tuple(w.shape[1] for w in params.weights), spec.K)
    params.check(la)
    sol = solve(spec, RegParams(tuple(lw), args.lambda_h), dims, bias=params.bias, la=la)
    rep = nc_report(params, la, sol)
    acc = predict_accuracy(params, la)
    header = [*FIELDS, "accuracy"]
    row = [("nan" if v is None else f"{v:.17g}") for v in rep.values().values()] + [f"{acc:.17g}"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(row)
    finally:
        if args.out:
            fh.close()
    for flag in rep.flags:
        log.warning(flag)
    return EXIT_OK


def cmd_spectra(args) -> int:
    spec = parse_counts(args.counts)
    gs = full_spectrum(spec)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["value", "multiplicity", "source"])
        for value, mult, source in gs.multiplicities:
            w.writerow([f"{value:.17g}", mult, source])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _build_config(args)
    h0 = import_features(args.features, cfg.spec(), cfg.dims[0]) if args.features else None
    rep = run_experiment(cfg, h_init=h0)
    print(json.dumps({"passed": rep.passed, "checks": rep.checks,
                      "objective_rel_gap": rep.objective_rel_gap}, indent=2))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = sweep(cfg, args.axis, values, out_dir=args.out, jobs=args.jobs)
    ok = all(r["status"] == "ok" and r["passed"] for r in rows)
    for r in rows:
        print(f"{r['axis']}={r['value']}: {r['status']} passed={r['passed']} {r['error']}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leufm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="closed-form minimizer")
    _add_problem_args(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train by full-batch descent")
    _add_problem_args(p)
    _add_train_args(p)
    p.add_argument("--features", help="CSV d0 x N initial features")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metrics", help="NC metrics of saved parameters")
    p.add_argument("--params", required=True, help="parameter directory (manifest.json)")
    p.add_argument("--counts", required=True)
    p.add_argument("--lambda-w", required=True)
    p.add_argument("--lambda-h", type=float, required=True)
    p.add_argument("--out", help="CSV file (default stdout)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("spectra", help="singular values of the centred label matrix")
    p.add_argument("--counts", required=True)
    p.add_argument("--out", help="CSV file (default stdout)")
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("compare", help="solve, train and compare")
    _add_problem_args(p)
    _add_train_args(p)
    p.add_argument("--features", help="CSV d0 x N initial features")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="compare across a parameter axis")
    _add_problem_args(p)
    _add_train_args(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="sweep directory")
    p.set_defaults(func=cmd_sweep)
    return parser


def _thread_limit():
    n = os.environ.get("LEUFM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _thread_limit()
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DivergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical error: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
