"""Command-line entry point: ``ddro <command> --config run.json --out DIR``.

Exit codes: 0 success, 2 configuration or input error, 3 solver error,
4 experiment finished with failed tasks.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationError, calibrate
from .config import ConfigError, RunConfig, canonical_json, content_hash, load_config, require_path, with_overrides
from .dataset import DatasetError, GroupedDataset, group_by_decision, load_dataset, write_dataset_csv
from .harness import run_coverage_check, run_sandwich_experiment
from .interpolation import nominal_distribution
from .measures import Box, MeasureError, expectation
from .pricing import PricingInstance, generate_dataset, solve_pricing, true_expected_revenue
from .robust import SolverError, cutting_surface_solve, worst_case_expectation

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("ddro")


def _envelope(cfg: RunConfig, kind: str, payload: dict) -> dict:
    return {
        "kind": kind,
        "version": __version__,
        "config": cfg.resolved(),
        "config_hash": cfg.digest(),
        "result": payload,
        "content_hash": content_hash(payload),
    }


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(canonical_json(doc), newline="\n")


def _write_sidecar(path: Path, cfg: RunConfig, kind: str) -> None:
    """``<name>.meta.json`` next to a non-JSON artifact, carrying the config and the file's hash."""
    meta = {
        "kind": kind,
        "version": __version__,
        "file": path.name,
        "config": cfg.resolved(),
        "config_hash": cfg.digest(),
        "content_hash": "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest(),
    }
    _write_json(path.with_name(path.name + ".meta.json"), meta)


def _write_with_sidecar(path: Path, text: str, cfg: RunConfig, kind: str) -> None:
    path.write_text(text, newline="\n")
    _write_sidecar(path, cfg, kind)


def _grouped(cfg: RunConfig) -> GroupedDataset:
    if cfg.dataset is None:
        raise ConfigError("dataset: required for this command")
    path = require_path(cfg.dataset.path, "dataset.path")
    p = cfg.problem
    obs = load_dataset(
        path, p.T, p.T, Box.cube(p.T, 0.0, p.x_U), Box.cube(p.T, 0.0, p.xi_U), cfg.dataset.format, cfg.dataset.decimals
    )
    return group_by_decision(obs)


def _radius(cfg: RunConfig, grouped: GroupedDataset) -> tuple[float, dict | None]:
    if cfg.radius is not None:
        return cfg.radius, None
    rp = cfg.radius_params
    report = calibrate(
        cfg.radius_params_for(grouped.outcome_dim),
        grouped,
        _feasible_box(cfg),
        cfg.scheme.decision_metric,
        rp.covering_method,
        rp.covering_resolution,
    )
    out = report.to_dict()
    # only nearest-neighbor has a certified c1
    out["c1_user_asserted"] = cfg.scheme.kind != "nearest-neighbor"
    return report.radius, out


def _feasible_box(cfg: RunConfig) -> Box:
    return Box.cube(cfg.problem.T, 0.0, cfg.problem.x_U)


def _instance(cfg: RunConfig, grouped: GroupedDataset, radius: float) -> PricingInstance:
    p = cfg.problem
    return PricingInstance(p.T, p.x_U, p.xi_U, grouped, radius, p.ground_p, cfg.scheme.build())


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    design = cfg.design()
    obs = generate_dataset(cfg.demand, design, cfg.gen_data.samples_per_point, cfg.seed)
    path = out / cfg.gen_data.filename
    write_dataset_csv(path, obs)
    _write_sidecar(path, cfg, "dataset")
    print(f"wrote {len(obs)} rows to {path}")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, out: Path) -> int:
    grouped = _grouped(cfg)
    if cfg.radius_params is None:
        raise ConfigError("radius_params: required by calibrate")
    _, report = _radius(cfg, grouped)
    report["dataset"] = grouped.summary()
    _write_json(out / "calibration.json", _envelope(cfg, "calibration", report))
    print(f"r_D={report['covering_radius']:.6g} b={report['sample_term']:.6g} r_N={report['radius']:.6g}")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    grouped = _grouped(cfg)
    r, calib = _radius(cfg, grouped)
    inst = _instance(cfg, grouped, r)
    if cfg.solver.mode == "pricing":
        result = solve_pricing(inst)
    else:
        result = cutting_surface_solve(inst.robust_problem(**cfg.solver.robust_kwargs()))
    payload = {"mode": cfg.solver.mode, "radius": r, "calibration": calib, "solution": result.to_dict()}
    _write_json(out / "solution.json", _envelope(cfg, "solution", payload))
    print(f"J_hat={result.value_hat:.6f} x_hat={np.round(result.x_hat, 6).tolist()}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    """Worst-case, nominal and true expected revenue at a fixed price vector."""
    ev = cfg.evaluate
    if ev is None:
        raise ConfigError("evaluate: section required by evaluate")
    if ev.solution is not None:
        doc = json.loads(require_path(ev.solution, "evaluate.solution").read_text())
        try:
            x = np.asarray(doc["result"]["solution"]["x_hat"], dtype=float)
        except (KeyError, TypeError):
            raise ConfigError("evaluate.solution: not a solution file") from None
        if x.shape != (cfg.problem.T,):
            raise ConfigError("evaluate.solution: x_hat dimension does not match problem.T")
    else:
        x = np.asarray(ev.x, dtype=float)
    grouped = _grouped(cfg)
    r, _ = _radius(cfg, grouped)
    problem = _instance(cfg, grouped, r).robust_problem(**cfg.solver.robust_kwargs())
    wc = worst_case_expectation(problem, x)
    nominal = expectation(nominal_distribution(problem.scheme, x, grouped), lambda s: float(np.dot(x, s)))
    seed = np.random.SeedSequence(cfg.seed, spawn_key=(4,))
    true = true_expected_revenue(cfg.demand, x, ev.revenue_mode, ev.mc_n, seed)
    payload = {
        "x": x.tolist(),
        "radius": r,
        "worst_case": wc.value,
        "worst_case_multiplier": wc.multiplier,
        "grid_slack": wc.grid_slack,
        "nominal": nominal,
        "true_revenue": true.value,
        "true_revenue_stderr": true.stderr,
        "revenue_mode": ev.revenue_mode,
    }
    _write_json(out / "evaluation.json", _envelope(cfg, "evaluation", payload))
    print(f"worst_case={wc.value:.6f} nominal={nominal:.6f} true={true.value:.6f}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, out: Path) -> int:
    ec = cfg.experiment_config()
    report = run_sandwich_experiment(ec, parallel=cfg.parallel)
    _write_with_sidecar(out / "experiment.csv", report.to_csv(), cfg, "experiment-rows")
    echo = {"config": cfg.resolved(), "config_hash": cfg.digest()}
    _write_with_sidecar(out / "experiment.md", report.summary_markdown(echo), cfg, "experiment-summary")
    payload = {
        "J_star": report.J_star,
        "x_star": report.x_star,
        "pass_rates": report.pass_rates(),
        "pass_rates_by_radius": {repr(r): report.pass_rates(rows) for r, rows in sorted(report.by_radius().items())},
        "mean_J_hat_by_radius": {repr(r): v for r, v in report.mean_J_hat_by_radius().items()},
        "failures": report.failures,
        "rows": [dict(row.__dict__) for row in report.rows],
    }
    _write_json(out / "experiment.json", _envelope(cfg, "experiment", payload))
    pr = report.pass_rates()
    rates = f"sandwich={pr['sandwich']:.3f} gap={pr['gap']:.3f}" if report.rows else "no completed rows"
    print(f"rows={len(report.rows)} {rates} failures={len(report.failures)}")
    return EXIT_PARTIAL if report.failures else EXIT_OK


def cmd_coverage(cfg: RunConfig, out: Path) -> int:
    cv = cfg.coverage
    ec = cfg.experiment_config()
    if cv.radius is not None:
        radius = cv.radius
    elif cfg.radius is not None:
        radius = cfg.radius
    else:
        radius = cfg.radius_params_for(cfg.problem.T)
    report = run_coverage_check(ec, cv.probes, cv.big_n, radius, cv.sample_size, cv.bias_n)
    _write_json(out / "coverage.json", _envelope(cfg, "coverage", report.to_dict()))
    print(f"coverage={report.coverage:.3f} over {len(report.covered)} seeds")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "coverage": cmd_coverage,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddro", description="Decision-dependent Wasserstein DRO toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--parallel", type=int, default=None, help="worker processes for experiments")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), args.seed, args.parallel)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved_config.json", cfg.resolved())
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, DatasetError, CalibrationError, MeasureError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
