"""Ambiguity-radius calibration: covering radius, sample term, and the radius itself."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dataset import GroupedDataset
from .interpolation import WeightScheme, nominal_distribution
from .measures import Box, DiscreteMeasure

MAX_GRID_DIM = 4
BISECTION_WIDTH = 1e-10
BISECTION_MAX_ITER = 500


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class RadiusParams:
    """Constants entering the radius formula.

    ``c2`` (Lipschitz constant of the true decision-to-distribution map) and
    the concentration constants ``c3``, ``c4`` cannot be estimated from data;
    the defaults of 1 are conventions and are echoed into every report.
    """

    beta: float
    k: int
    c1: float = 0.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0

    def __post_init__(self):
        vals = (self.beta, self.c1, self.c2, self.c3, self.c4)
        if not all(math.isfinite(v) for v in vals):
            raise CalibrationError("radius parameters must be finite")
        if not 0 < self.beta < 1:
            raise CalibrationError("beta must lie in (0, 1)")
        if self.k < 1:
            raise CalibrationError("outcome dimension k must be >= 1")
        if self.c1 < 0 or self.c2 < 0:
            raise CalibrationError("c1 and c2 must be nonnegative")
        if self.c3 <= 0 or self.c4 <= 0:
            raise CalibrationError("c3 and c4 must be positive")


@dataclass(frozen=True)
class AmbiguitySet:
    nominal: DiscreteMeasure
    radius: float
    ground_p: float = 1.0

    def __post_init__(self):
        if not self.radius >= 0:
            raise CalibrationError("radius must be nonnegative")


@dataclass(frozen=True)
class CalibrationReport:
    covering_radius: float
    covering_method: str
    covering_slack: float
    sample_term: float
    radius: float
    params: RadiusParams

    def to_dict(self) -> dict:
        out = asdict(self)
        out["params"] = asdict(self.params)
        return out


def covering_radius(
    feasible_box: Box,
    distinct_decisions,
    metric: float = 2.0,
    method: str = "exact-1d",
    resolution: int = 64,
) -> float:
    """Largest distance from a point of the box to its nearest observed decision.

    ``exact-1d`` checks box endpoints and midpoints of consecutive sorted
    decisions.  ``grid`` returns the maximum over a regular grid, which
    undershoots the true value by at most :func:`grid_slack`.
    """
    dec = np.atleast_2d(np.asarray(distinct_decisions, dtype=float))
    if dec.shape[0] == 0:
        raise CalibrationError("no decisions")
    if dec.shape[1] != feasible_box.dim:
        raise CalibrationError("decision dimension does not match the box")
    if not all(feasible_box.contains(x) for x in dec):
        raise CalibrationError("decision outside the feasible box")
    if method == "exact-1d":
        if feasible_box.dim != 1:
            raise CalibrationError("exact-1d covering radius requires d = 1")
        pts = np.sort(dec[:, 0])
        gaps = [pts[0] - feasible_box.lower[0], feasible_box.upper[0] - pts[-1]]
        gaps.extend(np.diff(pts) / 2)
        return float(max(gaps))
    if method == "grid":
        if resolution < 1:
            raise CalibrationError("grid resolution must be positive")
        if feasible_box.dim > MAX_GRID_DIM:
            raise CalibrationError(f"grid covering radius supports d <= {MAX_GRID_DIM}")
        tree = cKDTree(dec)
        best = 0.0
        # chunk so that d = 4 at 64 points per axis stays within memory
        axes = feasible_box.grid_axes(resolution)
        if len(axes) > 1:
            mesh = np.meshgrid(*axes[:-1], indexing="ij")
            head = np.stack([m.ravel() for m in mesh], axis=1)
        else:
            head = np.zeros((1, 0))
        for last in axes[-1]:
            chunk = np.column_stack([head, np.full(head.shape[0], last)])
            dist, _ = tree.query(chunk, p=metric)
            best = max(best, float(dist.max()))
        return best
    raise CalibrationError(f"unknown covering-radius method {method!r}")


def grid_slack(feasible_box: Box, resolution: int, metric: float = 2.0) -> float:
    return feasible_box.cell_diameter(resolution, metric)


def sample_term(beta: float, c: float, group_counts) -> float:
    """Smallest t > 0 with ``sum_i exp(-t N_i) < beta / c``, by bisection.

    Returns the upper end of the final bracket, so the strict inequality holds
    at the returned value.
    """
    counts = np.asarray(group_counts, dtype=float)
    if not 0 < beta < 1:
        raise CalibrationError("beta must lie in (0, 1)")
    if c <= 0:
        raise CalibrationError("c must be positive")
    if counts.size == 0 or np.any(counts < 1):
        raise CalibrationError("group counts must be >= 1")
    target = beta / c
    if target >= counts.size:
        return 0.0

    def excess(t: float) -> float:
        return float(np.exp(-t * counts).sum()) - target

    lo = 0.0
    hi = 2.0 * math.log(counts.size / target) / counts.min()
    while excess(hi) >= 0:
        hi *= 2.0
    for _ in range(BISECTION_MAX_ITER):
        if hi - lo < BISECTION_WIDTH:
            return hi
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            hi = mid
        else:
            lo = mid
    raise CalibrationError("sample-term bisection did not converge")


def radius(params: RadiusParams, grouped: GroupedDataset, r_D: float) -> float:
    if r_D < 0:
        raise CalibrationError("covering radius must be nonnegative")
    b = sample_term(params.beta, params.c3, grouped.group_counts)
    return (params.c1 + params.c2) * r_D + (b / params.c4) ** (1.0 / params.k)


def calibrate(
    params: RadiusParams,
    grouped: GroupedDataset,
    feasible_box: Box,
    metric: float = 2.0,
    method: str | None = None,
    resolution: int = 64,
) -> CalibrationReport:
    if method is None:
        method = "exact-1d" if feasible_box.dim == 1 else "grid"
    r_D = covering_radius(feasible_box, grouped.distinct_decisions, metric, method, resolution)
    slack = 0.0 if method == "exact-1d" else grid_slack(feasible_box, resolution, metric)
    b = sample_term(params.beta, params.c3, grouped.group_counts)
    return CalibrationReport(
        covering_radius=r_D,
        covering_method=method,
        covering_slack=slack,
        sample_term=b,
        radius=radius(params, grouped, r_D),
        params=params,
    )


def build_ambiguity(
    scheme: WeightScheme, grouped: GroupedDataset, x, radius: float, p: float = 1.0
) -> AmbiguitySet:
    return AmbiguitySet(nominal_distribution(scheme, x, grouped), float(radius), p)
