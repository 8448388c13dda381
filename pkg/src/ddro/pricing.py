"""Robust dynamic pricing: revenue objective, per-cell convex programs, demand simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.stats import norm as normal

from .dataset import GroupedDataset, Observation
from .interpolation import NEAREST_NEIGHBOR, WeightScheme
from .measures import Box
from .robust import RobustObjective, RobustProblem, SolveResult, SolverError
from .voronoi import VoronoiCell, voronoi_cells

CERTIFICATE_TOL = 1e-8

__all__ = [
    "DemandModel",
    "PricingInstance",
    "CellSolution",
    "RevenueEstimate",
    "revenue",
    "pricing_objective",
    "voronoi_cells",
    "solve_pricing_cell",
    "solve_pricing",
    "sample_demand",
    "generate_dataset",
    "true_expected_revenue",
    "ground_truth_optimum",
]


def revenue(x, xi) -> float | np.ndarray:
    """Cumulative revenue ``x . xi``; ``xi`` may be a single vector or an (m, T) array."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != x.shape[-1]:
        raise ValueError(f"price and demand lengths differ: {x.shape[-1]} vs {xi.shape[-1]}")
    out = xi @ x
    return float(out) if np.ndim(out) == 0 else out


def dual_exponent(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def pricing_objective(T: int, x_U: float, p: float = 1.0) -> RobustObjective:
    """Revenue as a max-min objective; Lipschitz in demand with constant ``||x_U 1||_q``."""
    q = dual_exponent(p)
    cp = x_U if math.isinf(q) else x_U * T ** (1.0 / q)
    return RobustObjective(
        h=lambda x, S: S @ x, lipschitz_cp=cp, direction="maximize", batched=True, affine_in_x=True
    )


@dataclass
class PricingInstance:
    T: int
    x_U: float
    xi_U: float
    grouped: GroupedDataset
    radius: float
    ground_p: float = 1.0
    scheme: WeightScheme = NEAREST_NEIGHBOR

    def __post_init__(self):
        if self.grouped.decision_dim != self.T or self.grouped.outcome_dim != self.T:
            raise ValueError("pricing data must have decision and outcome dimension T")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @property
    def dual_q(self) -> float:
        return dual_exponent(self.ground_p)

    @property
    def feasible_box(self) -> Box:
        return Box.cube(self.T, 0.0, self.x_U)

    @property
    def outcome_box(self) -> Box:
        return Box.cube(self.T, 0.0, self.xi_U)

    @property
    def lipschitz_cp(self) -> float:
        return pricing_objective(self.T, self.x_U, self.ground_p).lipschitz_cp

    def robust_problem(self, **solver) -> RobustProblem:
        return RobustProblem(
            objective=pricing_objective(self.T, self.x_U, self.ground_p),
            feasible_box=self.feasible_box,
            outcome_box=self.outcome_box,
            grouped=self.grouped,
            scheme=self.scheme,
            radius=self.radius,
            ground_p=self.ground_p,
            **solver,
        )


class CellSolution(NamedTuple):
    x: np.ndarray
    value: float
    certificate: float
    nu: np.ndarray
    transport_multiplier: float


def solve_pricing_cell(instance: PricingInstance, cell: VoronoiCell, f_coeffs) -> CellSolution:
    """Best robust price within one Voronoi cell for fixed nominal coefficients.

    For each atom ``xi_i`` with ``f_i > 0`` the adversary's inner problem
    ``min_{s in [0, xi_U]^T} x.s + eta ||s - xi_i||_p`` is replaced by its
    dual ``max -xi_U 1.lam_i - w_i.xi_i`` over ``||w_i||_q <= eta``,
    ``lam_i >= 0``, ``lam_i >= -(x + w_i)``, giving one program jointly
    linear in ``(x, nu, eta, w, lam)``.
    """
    f = np.asarray(f_coeffs, dtype=float)
    active = np.flatnonzero(f > 0)
    atoms = instance.grouped.distinct_outcomes[active]
    fa = f[active]
    q = instance.dual_q
    if q == 2.0:
        x, nu, eta, w = _cell_socp(instance, cell, fa, atoms)
    elif q in (1.0, math.inf):
        x, nu, eta, w = _cell_lp(instance, cell, fa, atoms, q)
    else:
        raise ValueError(f"dual norm q={q} not supported; use p in {{1, 2, inf}}")
    x, nu, eta, residual = _polish(instance, cell, x, eta, w, atoms, q)
    nu_full = np.zeros(instance.grouped.n_outcomes + 1)
    nu_full[active] = nu
    nu_full[-1] = -eta
    value = float(fa @ nu - instance.radius * eta)
    return CellSolution(x, value, residual, nu_full, eta)


def _cell_lp(instance: PricingInstance, cell: VoronoiCell, f, atoms, q):
    T, n = instance.T, atoms.shape[0]
    # variable layout: x | nu | eta | w (n*T) | lam (n*T) | u (n*T, only for q = 1)
    nx, nnu = T, n
    ix = slice(0, nx)
    inu = slice(nx, nx + nnu)
    ieta = nx + nnu
    iw = ieta + 1
    il = iw + n * T
    iu = il + n * T
    nvar = iu + (n * T if q == 1.0 else 0)

    def w(i, t):
        return iw + i * T + t

    def lam(i, t):
        return il + i * T + t

    rows, rhs = [], []

    def add(coefs: dict, b: float):
        r = np.zeros(nvar)
        for j, v in coefs.items():
            r[j] += v
        rows.append(r)
        rhs.append(b)

    for i in range(n):
        # nu_i + xi_U sum_t lam_it + w_i . xi_i <= 0
        c = {nx + i: 1.0}
        for t in range(T):
            c[lam(i, t)] = instance.xi_U
            c[w(i, t)] = atoms[i, t]
        add(c, 0.0)
        for t in range(T):
            # -x_t - w_it - lam_it <= 0
            add({t: -1.0, w(i, t): -1.0, lam(i, t): -1.0}, 0.0)
            if q == math.inf:
                add({w(i, t): 1.0, ieta: -1.0}, 0.0)
                add({w(i, t): -1.0, ieta: -1.0}, 0.0)
            else:
                u = iu + i * T + t
                add({w(i, t): 1.0, u: -1.0}, 0.0)
                add({w(i, t): -1.0, u: -1.0}, 0.0)
        if q == 1.0:
            c = {iu + i * T + t: 1.0 for t in range(T)}
            c[ieta] = -1.0
            add(c, 0.0)
    A = np.array(rows)
    b = np.array(rhs)
    if cell.A.size:
        cell_rows = np.zeros((cell.A.shape[0], nvar))
        cell_rows[:, ix] = cell.A
        A = np.vstack([A, cell_rows])
        b = np.concatenate([b, cell.b])
    cost = np.zeros(nvar)
    cost[inu] = -f
    cost[ieta] = instance.radius
    bounds = [(0.0, instance.x_U)] * T + [(None, None)] * n + [(0.0, None)]
    bounds += [(None, None)] * (n * T) + [(0.0, None)] * (n * T)
    if q == 1.0:
        bounds += [(0.0, None)] * (n * T)
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status == 2:
        raise SolverError(f"cell {cell.index} is empty")
    if res.status != 0:
        raise SolverError(f"cell {cell.index} LP failed: {res.message}")
    z = res.x
    return z[ix], z[inu], z[ieta], z[iw:il].reshape(n, T)


def _cell_socp(instance: PricingInstance, cell: VoronoiCell, f, atoms):
    import cvxpy as cp

    T, n = instance.T, atoms.shape[0]
    x = cp.Variable(T)
    nu = cp.Variable(n)
    eta = cp.Variable(nonneg=True)
    W = cp.Variable((n, T))
    L = cp.Variable((n, T), nonneg=True)
    cons = [x >= 0, x <= instance.x_U, L >= -(cp.reshape(x, (1, T), order="C") + W)]
    cons += [nu[i] + instance.xi_U * cp.sum(L[i]) + atoms[i] @ W[i] <= 0 for i in range(n)]
    cons += [cp.norm(W[i], 2) <= eta for i in range(n)]
    if cell.A.size:
        cons.append(cell.A @ x <= cell.b)
    prob = cp.Problem(cp.Maximize(f @ nu - instance.radius * eta), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise SolverError(f"cell {cell.index} SOCP failed: {prob.status}")
    return x.value, nu.value, float(eta.value), W.value


def _polish(instance: PricingInstance, cell: VoronoiCell, x, eta, W, atoms, q):
    """Project the solver output onto exact feasibility and report the certificate.

    ``x`` is clipped into the price box, ``eta`` raised to cover every
    ``||w_i||_q``, and ``lam_i``, ``nu_i`` set to their tightest feasible
    values, so remaining residuals come only from the cell inequalities.
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, instance.x_U)
    W = np.asarray(W, dtype=float).reshape(atoms.shape)
    eta = max(float(eta), float(np.max(np.linalg.norm(W, ord=q, axis=1), initial=0.0)), 0.0)
    L = np.maximum(0.0, -(x[None, :] + W))
    nu = -instance.xi_U * L.sum(axis=1) - np.einsum("it,it->i", W, atoms)
    residual = cell.residual(x)
    if residual > CERTIFICATE_TOL:
        raise SolverError(f"cell {cell.index}: certificate residual {residual:.3g} exceeds {CERTIFICATE_TOL}")
    return x, nu, eta, residual


def solve_pricing(instance: PricingInstance) -> SolveResult:
    """Enumerate Voronoi cells of the observed prices and keep the best cell program."""
    if instance.scheme.kind != "nearest-neighbor":
        raise ValueError("solve_pricing needs nearest-neighbor weights; use cutting_surface_solve otherwise")
    cells = voronoi_cells(instance.grouped.distinct_decisions, instance.feasible_box, instance.scheme.decision_metric)
    best: tuple[CellSolution, VoronoiCell] | None = None
    worst_residual = 0.0
    for cell in cells:
        sol = solve_pricing_cell(instance, cell, instance.grouped.group_weights[cell.index])
        worst_residual = max(worst_residual, sol.certificate)
        if best is None or sol.value > best[0].value + 1e-12:
            best = (sol, cell)
    sol, cell = best
    return SolveResult(
        x_hat=sol.x,
        value_hat=sol.value,
        dual_vars=sol.nu,
        iterations=len(cells),
        max_violation=0.0,
        cell=cell.index,
        cells_solved=len(cells),
        certificate_max_residual=worst_residual,
    )


# ---------------------------------------------------------------------------
# demand simulator and ground truth


@dataclass(frozen=True)
class DemandModel:
    """Normal demand with identity covariance, clipped to ``[0, xi_U]``.

    Period-t mean: ``(base - slope * t) * (level * x_U - mean(x))``.
    """

    T: int = 3
    x_U: float = 1.0
    xi_U: float = 5.0
    base: float = 1.4
    slope: float = 0.2
    level: float = 1.7
    noise_scale: float = 1.0

    @property
    def period_factors(self) -> np.ndarray:
        return self.base - self.slope * np.arange(1, self.T + 1)

    def mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.period_factors * (self.level * self.x_U - x.mean(axis=-1, keepdims=True))

    @property
    def feasible_box(self) -> Box:
        return Box.cube(self.T, 0.0, self.x_U)

    @property
    def outcome_box(self) -> Box:
        return Box.cube(self.T, 0.0, self.xi_U)


def sample_demand(model: DemandModel, x, seed, count: int) -> np.ndarray:
    """``count`` clipped demand vectors at prices ``x``; ``seed`` is anything ``default_rng`` accepts."""
    x = np.asarray(x, dtype=float)
    if not model.feasible_box.contains(x):
        raise ValueError("price vector outside [0, x_U]^T")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, model.T))
    return np.clip(model.mean(x) + model.noise_scale * z, 0.0, model.xi_U)


def generate_dataset(model: DemandModel, design, samples_per_point: int, seed: int) -> list[Observation]:
    """Observations at each design price; point j draws from its own child stream of ``seed``."""
    if samples_per_point < 1:
        raise ValueError("samples per design point must be >= 1")
    obs = []
    for j, x in enumerate(np.atleast_2d(np.asarray(design, dtype=float))):
        stream = np.random.SeedSequence(seed, spawn_key=(0, samples_per_point, j))
        for xi in sample_demand(model, x, stream, samples_per_point):
            obs.append(Observation(x, xi))
    return obs


class RevenueEstimate(NamedTuple):
    value: float
    stderr: float


def _clipped_normal_mean(mu, sigma, upper):
    if sigma == 0:
        return np.clip(mu, 0.0, upper)
    a = (0.0 - mu) / sigma
    b = (upper - mu) / sigma
    inside = mu * (normal.cdf(b) - normal.cdf(a)) + sigma * (normal.pdf(a) - normal.pdf(b))
    return inside + upper * normal.sf(b)


def true_expected_revenue(
    model: DemandModel, x, mode: str = "analytic-unclipped", n: int = 100_000, seed=None
) -> RevenueEstimate:
    """Expected revenue at ``x`` under the demand model.

    ``analytic-unclipped`` ignores the clipping to ``[0, xi_U]`` and is biased
    low wherever the mean demand is within a few units of zero;
    ``analytic-clipped`` is the exact expectation of the clipped model;
    ``monte-carlo`` averages ``n`` clipped draws and reports the standard error.
    """
    x = np.asarray(x, dtype=float)
    if mode == "analytic-unclipped":
        return RevenueEstimate(float(x @ model.mean(x)), 0.0)
    if mode == "analytic-clipped":
        return RevenueEstimate(float(x @ _clipped_normal_mean(model.mean(x), model.noise_scale, model.xi_U)), 0.0)
    if mode == "monte-carlo":
        if n < 2:
            raise ValueError("Monte Carlo revenue needs n >= 2")
        r = sample_demand(model, x, seed, n) @ x
        return RevenueEstimate(float(r.mean()), float(r.std(ddof=1) / math.sqrt(n)))
    raise ValueError(f"unknown revenue mode {mode!r}")


class GroundTruth(NamedTuple):
    x_star: np.ndarray
    J_star: float
    grid_step: float


def ground_truth_optimum(model: DemandModel, resolution: int = 21, clipped: bool = True) -> GroundTruth:
    """Maximize the analytic expected revenue over ``[0, x_U]^T``.

    Grid search, one finer grid around the best point, then a bounded
    quasi-Newton polish; the result can only improve on the grid value.
    """
    if resolution < 8:
        raise ValueError("ground-truth grid needs >= 8 points per dimension")
    if model.T > 4:
        raise ValueError("ground-truth grid search supports T <= 4")
    mode = "analytic-clipped" if clipped else "analytic-unclipped"
    box = model.feasible_box

    def value_on(X: np.ndarray) -> np.ndarray:
        mu = model.mean(X)
        if clipped:
            mu = _clipped_normal_mean(mu, model.noise_scale, model.xi_U)
        return np.einsum("ij,ij->i", X, mu)

    grid = box.grid(resolution)
    vals = value_on(grid)
    x_best = grid[int(np.argmax(vals))]
    step = model.x_U / (resolution - 1)
    local = Box(np.maximum(x_best - step, 0.0), np.minimum(x_best + step, model.x_U)).grid(resolution)
    lvals = value_on(local)
    x_best = local[int(np.argmax(lvals))]
    fine_step = 2 * step / (resolution - 1)
    res = minimize(lambda x: -true_expected_revenue(model, x, mode).value, x_best, method="L-BFGS-B",
                   bounds=list(zip(box.lower, box.upper)))
    if -res.fun > true_expected_revenue(model, x_best, mode).value:
        x_best = np.clip(res.x, box.lower, box.upper)
    return GroundTruth(x_best, true_expected_revenue(model, x_best, mode).value, fine_step)
