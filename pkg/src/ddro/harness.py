"""Monte Carlo experiments checking the out-of-sample sandwich and ambiguity-set coverage."""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import RadiusParams, calibrate
from .dataset import group_by_decision
from .interpolation import NEAREST_NEIGHBOR, nominal_distribution
from .measures import uniform_empirical, wasserstein1
from .pricing import (
    DemandModel,
    PricingInstance,
    generate_dataset,
    ground_truth_optimum,
    pricing_objective,
    sample_demand,
    solve_pricing,
    true_expected_revenue,
)

log = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "seed",
    "sample_size",
    "radius",
    "J_hat",
    "J_N",
    "J_N_stderr",
    "J_star",
    "pass_lower",
    "pass_upper",
    "pass_gap",
]

# spawn-key domains keep the data, evaluation and coverage streams disjoint
_DATA, _EVAL, _PROXY, _BIAS = 0, 1, 2, 3


def factorial_design(T: int, x_U: float, levels: int = 3) -> list[list[float]]:
    """Full-factorial price design on the levels ``x_U/levels, 2 x_U/levels, ..., x_U``."""
    grid = [x_U * (j + 1) / levels for j in range(levels)]
    return [list(p) for p in itertools.product(grid, repeat=T)]


@dataclass
class ExperimentConfig:
    seeds: list[int]
    sample_sizes: list[int]
    radii: list[float]
    design: list[list[float]]
    model: DemandModel = field(default_factory=DemandModel)
    beta: float = 0.1
    eval_mc_n: int = 100_000
    ground_p: float = 1.0
    stderr_slack: float = 3.0
    truth_resolution: int = 21

    def __post_init__(self):
        if not (self.seeds and self.sample_sizes and self.radii):
            raise ValueError("seeds, sample_sizes and radii must be nonempty")
        if self.eval_mc_n < 1000:
            raise ValueError("eval_mc_n must be >= 1000")
        if any(n < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be >= 1")
        if any(r < 0 for r in self.radii):
            raise ValueError("radii must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SandwichRow:
    seed: int
    sample_size: int
    radius: float
    J_hat: float
    J_N: float
    J_N_stderr: float
    J_star: float
    pass_lower: bool
    pass_upper: bool
    pass_gap: bool
    pass_estimate: bool
    x_hat: list[float]

    @property
    def sandwich(self) -> bool:
        return self.pass_lower and self.pass_upper


@dataclass
class ExperimentReport:
    rows: list[SandwichRow]
    J_star: float
    x_star: list[float]
    config_hash: str
    failures: list[dict] = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    def pass_rates(self, rows: list[SandwichRow] | None = None) -> dict[str, float | None]:
        """Fraction of rows passing each flag; ``None`` when there are no rows."""
        rows = self.rows if rows is None else rows
        if not rows:
            return {k: None for k in ("sandwich", "lower", "upper", "gap", "estimate")}
        return {
            "sandwich": float(np.mean([r.sandwich for r in rows])),
            "lower": float(np.mean([r.pass_lower for r in rows])),
            "upper": float(np.mean([r.pass_upper for r in rows])),
            "gap": float(np.mean([r.pass_gap for r in rows])),
            "estimate": float(np.mean([r.pass_estimate for r in rows])),
        }

    def by_radius(self) -> dict[float, list[SandwichRow]]:
        out: dict[float, list[SandwichRow]] = {}
        for r in self.rows:
            out.setdefault(r.radius, []).append(r)
        return out

    def mean_J_hat_by_radius(self) -> dict[float, float]:
        return {r: float(np.mean([row.J_hat for row in rows])) for r, rows in sorted(self.by_radius().items())}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.rows:
            writer.writerow([
                r.seed, r.sample_size, repr(r.radius), repr(r.J_hat), repr(r.J_N), repr(r.J_N_stderr),
                repr(r.J_star), str(r.pass_lower).lower(), str(r.pass_upper).lower(), str(r.pass_gap).lower(),
            ])
        return buf.getvalue()

    def summary_markdown(self, echo: dict | None = None) -> str:
        lines = ["# Sandwich experiment", "", f"config hash: `{self.config_hash}`", ""]
        lines.append(f"J* = {self.J_star:.6f} at x* = {np.round(self.x_star, 6).tolist()}")
        if self.constants:
            lines += ["", "| constant | value |", "|---|---|"]
            lines += [f"| {k} | {v} |" for k, v in self.constants.items()]
        lines += ["", "| radius | rows | sandwich | lower | upper | gap | estimate | mean J_hat | mean J_N |",
                  "|---|---|---|---|---|---|---|---|---|"]
        for radius, rows in sorted(self.by_radius().items()):
            pr = self.pass_rates(rows)
            lines.append(
                f"| {radius:g} | {len(rows)} | {pr['sandwich']:.3f} | {pr['lower']:.3f} | {pr['upper']:.3f} "
                f"| {pr['gap']:.3f} | {pr['estimate']:.3f} | {np.mean([r.J_hat for r in rows]):.4f} "
                f"| {np.mean([r.J_N for r in rows]):.4f} |"
            )
        if self.rows:
            pr = self.pass_rates()
            lines += ["", f"overall: sandwich {pr['sandwich']:.3f}, gap {pr['gap']:.3f}, rows {len(self.rows)}"]
        else:
            lines += ["", "overall: no completed rows"]
        if self.failures:
            lines += ["", "## Failed tasks", ""] + [f"- {json.dumps(f, sort_keys=True)}" for f in self.failures]
        if echo:
            lines += ["", "## Resolved configuration", "", "```json", json.dumps(echo, indent=2, sort_keys=True), "```"]
        return "\n".join(lines) + "\n"


def _instance(config: ExperimentConfig, seed: int, size: int, radius: float) -> PricingInstance:
    m = config.model
    obs = generate_dataset(m, config.design, size, seed)
    return PricingInstance(m.T, m.x_U, m.xi_U, group_by_decision(obs), radius, config.ground_p, NEAREST_NEIGHBOR)


def _sandwich_task(args) -> tuple[list[SandwichRow], list[dict]]:
    config, seed, size, J_star = args
    m = config.model
    cp = pricing_objective(m.T, m.x_U, config.ground_p).lipschitz_cp
    rows, failures = [], []
    try:
        instance = _instance(config, seed, size, 0.0)
    except Exception as exc:  # recorded, the sweep continues
        log.warning("data generation seed=%s size=%s failed: %s", seed, size, exc)
        return [], [{"seed": seed, "sample_size": size, "radius": None, "error": repr(exc)}]
    for ridx, radius in enumerate(config.radii):
        try:
            instance.radius = float(radius)
            sol = solve_pricing(instance)
            stream = np.random.SeedSequence(seed, spawn_key=(_EVAL, size, ridx))
            J_N, se = true_expected_revenue(m, sol.x_hat, "monte-carlo", config.eval_mc_n, stream)
        except Exception as exc:  # recorded, the sweep continues
            log.warning("task seed=%s size=%s radius=%s failed: %s", seed, size, radius, exc)
            failures.append({"seed": seed, "sample_size": size, "radius": float(radius), "error": repr(exc)})
            continue
        slack = config.stderr_slack * se
        band = 2.0 * cp * radius
        rows.append(SandwichRow(
            seed=seed, sample_size=size, radius=float(radius), J_hat=sol.value_hat, J_N=J_N, J_N_stderr=se,
            J_star=J_star,
            pass_lower=bool(sol.value_hat <= J_N + slack),
            pass_upper=bool(J_N - slack <= J_star),
            pass_gap=bool(J_star - J_N <= band + slack),
            pass_estimate=bool(J_N <= sol.value_hat + band + slack),
            x_hat=np.asarray(sol.x_hat).tolist(),
        ))
    return rows, failures


def run_sandwich_experiment(config: ExperimentConfig, parallel: int = 1) -> ExperimentReport:
    """Solve the robust pricing problem per (seed, sample size, radius) and check the sandwich.

    Max-min orientation: the robust value should not exceed the true revenue
    of its solution, which should not exceed the true optimum, and the true
    optimum should be within ``2 c_p r`` of it.  Each comparison allows
    ``stderr_slack`` Monte Carlo standard errors.  Data depend only on
    (seed, sample size), so all radii of one task see the same dataset.
    """
    truth = ground_truth_optimum(config.model, config.truth_resolution, clipped=True)
    tasks = [(config, s, n, truth.J_star) for s in config.seeds for n in config.sample_sizes]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_sandwich_task, tasks))
    else:
        results = [_sandwich_task(t) for t in tasks]
    rows: list[SandwichRow] = []
    failures: list[dict] = []
    for task_rows, task_failures in results:
        rows.extend(task_rows)
        failures.extend(task_failures)
    rows.sort(key=lambda r: (r.seed, r.sample_size, r.radius))
    failures.sort(key=lambda f: (f["seed"], f["sample_size"], -1.0 if f["radius"] is None else f["radius"]))
    m = config.model
    constants = {
        "radius source": "fixed per row, calibration bypassed",
        "beta": config.beta,
        "ground metric p": config.ground_p,
        "c_p": pricing_objective(m.T, m.x_U, config.ground_p).lipschitz_cp,
        "stderr slack": config.stderr_slack,
        "eval_mc_n": config.eval_mc_n,
        "design points": len(config.design),
        "J* revenue model": "analytic, clipped demand",
    }
    return ExperimentReport(rows, truth.J_star, truth.x_star.tolist(), config.digest(), failures, constants)


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    radius_by_seed: dict[int, float]
    distances: dict[int, list[float]]
    probes: list[list[float]]
    proxy_bias: list[float]
    big_n: int
    config_hash: str

    @property
    def covered(self) -> dict[int, bool]:
        return {s: bool(max(d) <= self.radius_by_seed[s]) for s, d in self.distances.items()}

    @property
    def coverage(self) -> float:
        return float(np.mean(list(self.covered.values())))

    def to_dict(self) -> dict:
        dists = np.array([self.distances[s] for s in sorted(self.distances)])
        return {
            "coverage": self.coverage,
            "big_n": self.big_n,
            "radius_by_seed": {str(s): r for s, r in sorted(self.radius_by_seed.items())},
            "covered": {str(s): c for s, c in sorted(self.covered.items())},
            "probes": self.probes,
            "distances": {str(s): d for s, d in sorted(self.distances.items())},
            "per_probe_quantiles": {
                q: np.quantile(dists, float(q), axis=0).tolist() for q in ("0.0", "0.5", "0.9", "1.0")
            },
            "proxy_bias": self.proxy_bias,
            "config_hash": self.config_hash,
        }


def default_probes(T: int, x_U: float) -> list[list[float]]:
    """Near-corner probes (0.1 and 0.9 of the cap per period) plus the box center."""
    corners = [list(p) for p in itertools.product((0.1 * x_U, 0.9 * x_U), repeat=T)]
    return corners + [[0.5 * x_U] * T]


def run_coverage_check(
    config: ExperimentConfig,
    probes=None,
    big_n: int = 10_000,
    radius: float | RadiusParams = 1.5,
    sample_size: int | None = None,
    bias_n: int = 2_000,
) -> CoverageReport:
    """Fraction of seeds whose nominal distributions are within the radius of the truth at every probe.

    The true demand law at a probe is replaced by ``big_n`` fresh draws.  The
    error this introduces is estimated per probe by the W1 distance between
    two independent ``bias_n``-sample proxies (an overestimate at
    ``bias_n < big_n``).
    """
    if big_n < 10_000:
        raise ValueError("big_n must be >= 10^4")
    m = config.model
    probes = default_probes(m.T, m.x_U) if probes is None else [list(map(float, p)) for p in probes]
    size = config.sample_sizes[0] if sample_size is None else sample_size
    radius_by_seed: dict[int, float] = {}
    distances: dict[int, list[float]] = {}
    for seed in config.seeds:
        grouped = group_by_decision(generate_dataset(m, config.design, size, seed))
        if isinstance(radius, RadiusParams):
            r = calibrate(radius, grouped, m.feasible_box).radius
        else:
            r = float(radius)
        radius_by_seed[seed] = r
        row = []
        for j, x in enumerate(probes):
            nominal = nominal_distribution(NEAREST_NEIGHBOR, x, grouped)
            stream = np.random.SeedSequence(seed, spawn_key=(_PROXY, j))
            proxy = uniform_empirical(sample_demand(m, x, stream, big_n))
            row.append(wasserstein1(nominal, proxy, config.ground_p))
        distances[seed] = row
    bias = []
    for j, x in enumerate(probes):
        a = sample_demand(m, x, np.random.SeedSequence(0, spawn_key=(_BIAS, j, 0)), bias_n)
        b = sample_demand(m, x, np.random.SeedSequence(0, spawn_key=(_BIAS, j, 1)), bias_n)
        bias.append(wasserstein1(uniform_empirical(a), uniform_empirical(b), config.ground_p))
    return CoverageReport(radius_by_seed, distances, probes, bias, big_n, config.digest())
