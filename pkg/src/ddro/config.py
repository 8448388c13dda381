"""Versioned JSON run configuration, validated before any computation starts."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .calibration import RadiusParams
from .harness import ExperimentConfig, factorial_design
from .interpolation import WeightScheme
from .pricing import DemandModel

SCHEMA_VERSION = "ddro-run/1"


class ConfigError(ValueError):
    """Invalid configuration; the message lists field paths."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemSection(_Section):
    T: int = Field(3, ge=1)
    x_U: float = Field(1.0, gt=0)
    xi_U: float = Field(5.0, gt=0)
    ground_p: float = Field(1.0, ge=1)


class DatasetSection(_Section):
    path: str
    format: Literal["csv", "json"] | None = None
    decimals: int | None = Field(None, ge=0)


class SchemeSection(_Section):
    kind: Literal["nearest-neighbor", "inverse-distance"] = "nearest-neighbor"
    shepard_exponent: float = Field(2.0, ge=1)
    lipschitz_c1: float = Field(0.0, ge=0)
    decision_metric: float = Field(2.0, ge=1)

    @model_validator(mode="after")
    def _nn_c1(self):
        if self.kind == "nearest-neighbor" and self.lipschitz_c1 != 0:
            raise ValueError("nearest-neighbor interpolation has lipschitz_c1 = 0")
        return self

    def build(self) -> WeightScheme:
        return WeightScheme(self.kind, self.shepard_exponent, self.lipschitz_c1, self.decision_metric)


class RadiusParamsSection(_Section):
    beta: float = Field(0.1, gt=0, lt=1)
    c2: float = Field(1.0, ge=0)
    c3: float = Field(1.0, gt=0)
    c4: float = Field(1.0, gt=0)
    covering_method: Literal["exact-1d", "grid"] | None = None
    covering_resolution: int = Field(64, ge=1)

    def build(self, k: int, c1: float) -> RadiusParams:
        return RadiusParams(self.beta, k, c1, self.c2, self.c3, self.c4)


class SolverSection(_Section):
    mode: Literal["pricing", "cutting-surface"] = "pricing"
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(200, ge=1)
    outcome_grid_resolution: int = Field(21, ge=2)
    refine_resolution: int = Field(5, ge=2)
    decision_grid_resolution: int = Field(5, ge=2)
    n_starts: int = Field(3, ge=1)

    def robust_kwargs(self) -> dict:
        return self.model_dump(exclude={"mode"})


class DemandSection(_Section):
    base: float = 1.4
    slope: float = 0.2
    level: float = 1.7
    noise_scale: float = Field(1.0, ge=0)


class GenDataSection(_Section):
    design: list[list[float]] | None = None
    design_levels: int = Field(3, ge=1)
    samples_per_point: int = Field(15, ge=1)
    filename: str = "dataset.csv"


class ExperimentSection(_Section):
    seeds: list[int] = Field(default_factory=lambda: list(range(10)), min_length=1)
    sample_sizes: list[int] = Field(default_factory=lambda: [5, 10, 15, 20, 25, 30], min_length=1)
    radii: list[float] = Field(default_factory=lambda: [1.5], min_length=1)
    beta: float = Field(0.1, gt=0, lt=1)
    eval_mc_n: int = Field(100_000, ge=1000)
    stderr_slack: float = Field(3.0, ge=0)
    truth_resolution: int = Field(21, ge=8)


class CoverageSection(_Section):
    sample_size: int = Field(15, ge=1)
    big_n: int = Field(10_000, ge=10_000)
    bias_n: int = Field(2_000, ge=2)
    probes: list[list[float]] | None = None
    radius: float | None = Field(None, ge=0)


class EvaluateSection(_Section):
    x: list[float] | None = None
    solution: str | None = None
    revenue_mode: Literal["analytic-unclipped", "analytic-clipped", "monte-carlo"] = "monte-carlo"
    mc_n: int = Field(100_000, ge=2)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.x is None) == (self.solution is None):
            raise ValueError("give exactly one of 'x' and 'solution'")
        return self


class RunConfig(_Section):
    schema_version: Literal["ddro-run/1"]
    seed: int = Field(0, ge=0)
    parallel: int = Field(1, ge=1)
    problem: ProblemSection = ProblemSection()
    dataset: DatasetSection | None = None
    scheme: SchemeSection = SchemeSection()
    radius: float | None = Field(None, ge=0)
    radius_params: RadiusParamsSection | None = None
    solver: SolverSection = SolverSection()
    demand_model: DemandSection = DemandSection()
    gen_data: GenDataSection = GenDataSection()
    experiment: ExperimentSection = ExperimentSection()
    coverage: CoverageSection = CoverageSection()
    evaluate: EvaluateSection | None = None

    @model_validator(mode="after")
    def _cross_checks(self):
        if (self.radius is None) == (self.radius_params is None):
            raise ValueError("give exactly one of 'radius' and 'radius_params'")
        T = self.problem.T
        if self.gen_data.design is not None:
            _check_points(self.gen_data.design, T, self.problem.x_U, "gen_data.design")
        if self.coverage.probes is not None:
            _check_points(self.coverage.probes, T, self.problem.x_U, "coverage.probes")
        if self.evaluate is not None and self.evaluate.x is not None:
            _check_points([self.evaluate.x], T, self.problem.x_U, "evaluate.x")
        if self.solver.mode == "pricing" and self.scheme.kind != "nearest-neighbor":
            raise ValueError("solver.mode 'pricing' needs scheme.kind 'nearest-neighbor'")
        return self

    # -- derived objects

    @property
    def demand(self) -> DemandModel:
        p = self.problem
        d = self.demand_model
        return DemandModel(p.T, p.x_U, p.xi_U, d.base, d.slope, d.level, d.noise_scale)

    def design(self) -> list[list[float]]:
        if self.gen_data.design is not None:
            return [list(map(float, pt)) for pt in self.gen_data.design]
        return factorial_design(self.problem.T, self.problem.x_U, self.gen_data.design_levels)

    def radius_params_for(self, k: int) -> RadiusParams:
        if self.radius_params is None:
            raise ConfigError("radius_params: required for calibration")
        return self.radius_params.build(k, self.scheme.lipschitz_c1)

    def experiment_config(self) -> ExperimentConfig:
        e = self.experiment
        return ExperimentConfig(
            seeds=list(e.seeds),
            sample_sizes=list(e.sample_sizes),
            radii=list(e.radii),
            design=self.design(),
            model=self.demand,
            beta=e.beta,
            eval_mc_n=e.eval_mc_n,
            ground_p=self.problem.ground_p,
            stderr_slack=e.stderr_slack,
            truth_resolution=e.truth_resolution,
        )

    def resolved(self) -> dict:
        """Every field with defaults filled in, in a stable key order."""
        return json.loads(canonical_json(self.model_dump(mode="json")))

    def digest(self) -> str:
        return content_hash(self.resolved())


def _check_points(points, T: int, x_U: float, where: str):
    for i, pt in enumerate(points):
        if len(pt) != T:
            raise ValueError(f"{where}[{i}]: expected {T} coordinates, got {len(pt)}")
        if any(not 0 <= v <= x_U for v in pt):
            raise ValueError(f"{where}[{i}]: coordinates must lie in [0, {x_U}]")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a config mapping; relative paths are resolved against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a JSON object")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    base = Path(base_dir)
    updates = {}
    if cfg.dataset is not None and not Path(cfg.dataset.path).is_absolute():
        updates["dataset"] = cfg.dataset.model_copy(update={"path": str((base / cfg.dataset.path).resolve())})
    if cfg.evaluate is not None and cfg.evaluate.solution and not Path(cfg.evaluate.solution).is_absolute():
        updates["evaluate"] = cfg.evaluate.model_copy(
            update={"solution": str((base / cfg.evaluate.solution).resolve())}
        )
    return cfg.model_copy(update=updates) if updates else cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data, path.parent)


def with_overrides(cfg: RunConfig, seed: int | None = None, parallel: int | None = None) -> RunConfig:
    """Apply command-line overrides; ``seed`` also replaces the experiment seed list."""
    data = cfg.model_dump(mode="json")
    if seed is not None:
        data["seed"] = seed
        data["experiment"]["seeds"] = [seed]
    if parallel is not None:
        data["parallel"] = parallel
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def require_path(path: str | None, field: str) -> Path:
    if path is None:
        raise ConfigError(f"{field}: required for this command")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{field}: file not found: {p}")
    return p
