"""Worst-case expectation over Wasserstein balls and the cutting-surface DD-DRO solver.

Everything internal is written for ``min_x max_P E_P[h]``.  A maximizing outer
problem (``direction="maximize"``) is handled by solving the same problem for
``-h`` and flipping signs on the way out, so values and multipliers returned
to the caller are always in the caller's sense.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, NamedTuple

import numpy as np
from scipy.optimize import linprog, minimize

from .dataset import GroupedDataset
from .interpolation import WeightScheme, nominal_coefficients
from .measures import Box, DiscreteMeasure, make_measure, pairwise_distance
from .voronoi import VoronoiCell, voronoi_cells

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


@dataclass(frozen=True)
class RobustObjective:
    """Objective ``h(x, s)`` with Lipschitz constant ``lipschitz_cp`` in ``s`` under ``||.||_p``.

    With ``batched=True`` the callable receives a decision vector and an
    ``(m, k)`` array of outcomes and returns ``m`` values; otherwise it is
    called once per outcome.  ``affine_in_x`` lets the cutting-surface master
    be solved as a linear program.
    """

    h: Callable
    lipschitz_cp: float
    direction: Literal["minimize", "maximize"] = "minimize"
    batched: bool = False
    affine_in_x: bool = False

    def __post_init__(self):
        if self.direction not in ("minimize", "maximize"):
            raise ValueError(f"direction must be minimize or maximize, got {self.direction!r}")
        if not self.lipschitz_cp > 0:
            raise ValueError("lipschitz_cp must be positive")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "minimize" else -1.0

    def evaluate(self, x, S) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if self.batched:
            out = np.asarray(self.h(x, S), dtype=float).reshape(-1)
        else:
            out = np.array([float(self.h(x, s)) for s in S])
        if not np.all(np.isfinite(out)):
            raise SolverError("objective is not finite on the outcome grid")
        return out

    def adversarial(self, x, S) -> np.ndarray:
        """``h`` in the internal min-max sense (the adversary maximizes this)."""
        return self.sign * self.evaluate(x, S)


@dataclass
class RobustProblem:
    objective: RobustObjective
    feasible_box: Box
    outcome_box: Box
    grouped: GroupedDataset
    scheme: WeightScheme
    radius: float
    ground_p: float = 1.0
    outcome_grid_resolution: int = 21
    refine_resolution: int = 5
    tol: float = 1e-6
    max_iter: int = 200
    decision_grid_resolution: int = 5
    n_starts: int = 3

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")
        if self.outcome_grid_resolution < 2:
            raise ValueError("outcome grid resolution must be >= 2 per dimension")
        if self.grouped.outcome_dim != self.outcome_box.dim:
            raise ValueError("outcome dimension does not match the outcome box")
        if self.grouped.decision_dim != self.feasible_box.dim:
            raise ValueError("decision dimension does not match the feasible box")

    @property
    def grid_slack(self) -> float:
        """Bound on how far grid-restricted inner suprema can fall short of the true ones."""
        cell = self.outcome_box.cell_diameter(self.outcome_grid_resolution, self.ground_p)
        return self.objective.lipschitz_cp * cell

    @property
    def lambda_max(self) -> float:
        return 2.0 * self.objective.lipschitz_cp


@dataclass
class SolveResult:
    x_hat: np.ndarray
    value_hat: float
    dual_vars: np.ndarray
    iterations: int
    max_violation: float
    grid_slack: float = 0.0
    cell: int | None = None
    cells_solved: int = 0
    certificate_max_residual: float | None = None
    master_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "x_hat": np.asarray(self.x_hat).tolist(),
            "J_hat": float(self.value_hat),
            "dual_vars": np.asarray(self.dual_vars).tolist(),
            "iterations": int(self.iterations),
            "max_violation": float(self.max_violation),
            "grid_slack": float(self.grid_slack),
            "cell": self.cell,
            "cells_solved": int(self.cells_solved),
            "certificate_max_residual": self.certificate_max_residual,
        }


class WorstCase(NamedTuple):
    value: float
    witness: DiscreteMeasure
    multiplier: float
    grid_slack: float


class Separation(NamedTuple):
    violation: float
    s_star: np.ndarray
    i_star: int


# ---------------------------------------------------------------------------
# candidate outcome sets


def _tensor(axes: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class _AtomGrids:
    """Per-atom search sets: the regular outcome grid with the atom's own
    coordinates spliced into every axis, plus on-demand local refinements."""

    def __init__(self, problem: RobustProblem):
        self.problem = problem
        self.box = problem.outcome_box
        self.axes = self.box.grid_axes(problem.outcome_grid_resolution)
        self.step = (self.box.upper - self.box.lower) / (problem.outcome_grid_resolution - 1)
        self.atoms = problem.grouped.distinct_outcomes
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def points(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if i not in self._cache:
            atom = self.atoms[i]
            S = _tensor([np.union1d(ax, [a]) for ax, a in zip(self.axes, atom)])
            D = pairwise_distance(S, atom[None, :], self.problem.ground_p)[:, 0]
            self._cache[i] = (S, D)
        return self._cache[i]

    def local(self, i: int, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.problem.refine_resolution
        axes = []
        for c, h, lo, hi in zip(center, self.step, self.box.lower, self.box.upper):
            axes.append(np.union1d(np.linspace(max(lo, c - h), min(hi, c + h), n), [c]))
        S = _tensor(axes)
        D = pairwise_distance(S, self.atoms[i][None, :], self.problem.ground_p)[:, 0]
        return S, D

    def best(self, i: int, x, slope: float, offset: float = 0.0) -> tuple[float, np.ndarray]:
        """Max of ``h'(x, s) - slope * d(s, atom_i) - offset`` over the grid, refined once."""
        obj = self.problem.objective
        S, D = self.points(i)
        vals = obj.adversarial(x, S) - slope * D
        j = int(np.argmax(vals))
        Sl, Dl = self.local(i, S[j])
        local_vals = obj.adversarial(x, Sl) - slope * Dl
        jl = int(np.argmax(local_vals))
        if local_vals[jl] > vals[j]:
            return float(local_vals[jl]) - offset, Sl[jl]
        return float(vals[j]) - offset, S[j]


# ---------------------------------------------------------------------------
# fixed-x dual


class _Envelope:
    """Upper concave envelope of ``(d(s, atom), h'(x, s))`` over candidate points.

    ``max_s h'(x,s) - lam d(s, atom)`` for ``lam >= 0`` depends only on the
    envelope vertices up to the one with the largest ``h'``.
    """

    def __init__(self, D: np.ndarray, H: np.ndarray, S: np.ndarray):
        order = np.lexsort((-H, D))
        D, H, S = D[order], H[order], S[order]
        # Pareto filter: keep points strictly improving h' as d grows
        keep = H > np.concatenate([[-np.inf], np.maximum.accumulate(H)[:-1]])
        D, H, S = D[keep], H[keep], S[keep]
        hull: list[int] = []
        for j in range(D.shape[0]):
            while len(hull) >= 2:
                o, a = hull[-2], hull[-1]
                cross = (D[a] - D[o]) * (H[j] - H[o]) - (H[a] - H[o]) * (D[j] - D[o])
                if cross >= 0:
                    hull.pop()
                else:
                    break
            hull.append(j)
        self.D, self.H, self.S = D[hull], H[hull], S[hull]

    def value(self, lam: float) -> float:
        return float(np.max(self.H - lam * self.D))

    def argmax(self, lam: float) -> int:
        return int(np.argmax(self.H - lam * self.D))


def _golden_min(fn: Callable[[float], float], lo: float, hi: float, width: float = 1e-12) -> float:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > width * max(1.0, hi - lo):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    candidates = [lo, hi, 0.5 * (a + b)]
    return min(candidates, key=fn)


def _nominal_weights(problem: RobustProblem, x, nominal: DiscreteMeasure | None) -> np.ndarray:
    """Coefficients on ``grouped.distinct_outcomes`` for ``x`` (or for an explicit nominal)."""
    if nominal is None:
        return nominal_coefficients(problem.scheme, x, problem.grouped)
    atoms = problem.grouped.distinct_outcomes
    f = np.zeros(atoms.shape[0])
    for a, w in zip(nominal.atoms, nominal.weights):
        hit = np.flatnonzero(np.all(atoms == a, axis=1))
        if hit.size != 1:
            raise ValueError("nominal atom is not a distinct outcome of the dataset")
        f[hit[0]] += w
    return f


def worst_case_expectation(
    problem: RobustProblem, x, nominal: DiscreteMeasure | None = None
) -> WorstCase:
    """Worst case of ``E_P[h(x, .)]`` over the Wasserstein ball around the nominal at ``x``.

    Minimizes the one-dimensional dual
    ``lam * r + sum_i f_i max_s [h(x,s) - lam d(s, xi_i)]`` over
    ``lam in [0, 2 c_p]`` by golden-section search; inner maxima are taken over
    the outcome grid and refined once around each maximizer.  The grid can only
    miss adversarial gain, so the returned value understates the adversary's
    true optimum by at most ``grid_slack``.

    ``nominal`` overrides the interpolated nominal; it must be supported on
    the dataset's distinct outcomes (used to evaluate a Voronoi cell's
    distribution on that cell's boundary).
    """
    x = np.asarray(x, dtype=float)
    obj = problem.objective
    f = _nominal_weights(problem, x, nominal)
    active = np.flatnonzero(f > 0)
    if active.size == 0:
        raise SolverError("empty nominal distribution")
    atoms = problem.grouped.distinct_outcomes
    fa = f[active]
    if problem.radius == 0:
        vals = obj.evaluate(x, atoms[active])
        return WorstCase(float(fa @ vals), make_measure(atoms[active], fa), 0.0, 0.0)

    grids = _AtomGrids(problem)
    envs = []
    for i in active:
        S, D = grids.points(i)
        envs.append(_Envelope(D, obj.adversarial(x, S), S))

    def dual(lam: float) -> float:
        return lam * problem.radius + float(sum(w * e.value(lam) for w, e in zip(fa, envs)))

    lam = _golden_min(dual, 0.0, problem.lambda_max)
    # one local refinement around each current maximizer, then re-minimize
    for n, i in enumerate(active):
        e = envs[n]
        Sl, Dl = grids.local(i, e.S[e.argmax(lam)])
        envs[n] = _Envelope(
            np.concatenate([e.D, Dl]), np.concatenate([e.H, obj.adversarial(x, Sl)]), np.concatenate([e.S, Sl])
        )
    lam = _golden_min(dual, 0.0, problem.lambda_max)
    value = dual(lam)
    witness = _witness(envs, fa, lam, problem.radius)
    return WorstCase(obj.sign * value, witness, lam, problem.grid_slack)


def _witness(envs: list[_Envelope], f: np.ndarray, lam: float, radius: float) -> DiscreteMeasure:
    """Primal-feasible worst-case distribution read off the envelopes at ``lam``.

    Each atom's mass goes to its envelope maximizer just right of ``lam``
    (cheaper move) or just left (costlier move); one mixing fraction spends
    exactly the transport budget.
    """
    eps = 1e-7 * max(1.0, lam)
    near = [e.argmax(lam + eps) for e in envs]
    far = [e.argmax(max(lam - eps, 0.0)) if lam > 0 else e.argmax(0.0) for e in envs]
    cost_near = float(sum(w * e.D[j] for w, e, j in zip(f, envs, near)))
    cost_far = float(sum(w * e.D[j] for w, e, j in zip(f, envs, far)))
    if cost_far <= radius:
        theta = 1.0
    elif cost_near >= radius:
        theta = 0.0
    else:
        theta = (radius - cost_near) / (cost_far - cost_near)
    pts, wts = [], []
    for w, e, jn, jf in zip(f, envs, near, far):
        pts.extend([e.S[jn], e.S[jf]])
        wts.extend([w * (1.0 - theta), w * theta])
    return make_measure(np.array(pts), np.array(wts))


# ---------------------------------------------------------------------------
# separation oracle


def _internal_nu(problem: RobustProblem, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (problem.grouped.n_outcomes + 1,):
        raise ValueError(f"nu must have length N_xi + 1 = {problem.grouped.n_outcomes + 1}")
    nu_int = problem.objective.sign * nu
    if nu_int[-1] < -1e-12:
        want = ">= 0" if problem.objective.direction == "minimize" else "<= 0"
        raise ValueError(f"transport multiplier nu[N_xi+1] must be {want}")
    return nu_int


def separation_oracle(problem: RobustProblem, x, nu, atoms=None) -> Separation:
    """Most violated semi-infinite constraint ``h(x,s) - nu_i - nu_last d(s, xi_i) <= 0``.

    ``nu`` follows the caller's sense: for a maximizing outer problem the
    constraint reads ``h(x,s) - nu_i - nu_last d(s, xi_i) >= 0`` with
    ``nu_last <= 0``.  A nonpositive violation means grid-feasible.
    """
    x = np.asarray(x, dtype=float)
    nu_int = _internal_nu(problem, nu)
    grids = _AtomGrids(problem)
    idx = range(problem.grouped.n_outcomes) if atoms is None else atoms
    best = Separation(-math.inf, grids.atoms[0], -1)
    for i in idx:
        v, s = grids.best(i, x, max(nu_int[-1], 0.0), nu_int[i])
        if v > best.violation:
            best = Separation(v, s, int(i))
    return best


# ---------------------------------------------------------------------------
# cutting-surface solver


def cutting_surface_solve(problem: RobustProblem) -> SolveResult:
    """Solve the semi-infinite reformulation by alternating master and separation.

    Nearest-neighbor interpolation makes the nominal coefficients constant on
    each Euclidean Voronoi cell, so one master per cell is solved (an LP when
    ``h`` is affine in ``x``) and the best cell wins.  Other schemes search over
    ``x`` directly, evaluating the exact fixed-x dual at each candidate.
    """
    if problem.scheme.kind == "nearest-neighbor" and problem.scheme.decision_metric == 2.0:
        return _solve_by_cells(problem)
    return _solve_by_local_search(problem)


class _AffineModel:
    """``h'(x, s) = a(s) + b(s) . x`` recovered from d + 1 evaluations."""

    def __init__(self, problem: RobustProblem):
        self.obj = problem.objective
        self.base = problem.feasible_box.lower.copy()
        self.d = problem.feasible_box.dim

    def coefficients(self, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h0 = self.obj.adversarial(self.base, S)
        B = np.empty((S.shape[0], self.d))
        for t in range(self.d):
            xt = self.base.copy()
            xt[t] += 1.0
            B[:, t] = self.obj.adversarial(xt, S) - h0
        return h0 - B @ self.base, B


def _solve_by_cells(problem: RobustProblem) -> SolveResult:
    cells = voronoi_cells(problem.grouped.distinct_decisions, problem.feasible_box)
    grids = _AtomGrids(problem)
    best: tuple | None = None
    total_iters = 0
    for cell in cells:
        f = problem.grouped.group_weights[cell.index]
        res = _cell_cutting_surface(problem, grids, cell, f)
        total_iters += res[4]
        if best is None or res[1] < best[1] - 1e-12:
            best = res + (cell,)
    x, val_int, nu_active, active, iters, viol, history, cell = best
    nu_int = _complete_nu(problem, grids, x, nu_active, active)
    sign = problem.objective.sign
    return SolveResult(
        x_hat=x,
        value_hat=sign * val_int,
        dual_vars=sign * nu_int,
        iterations=total_iters,
        max_violation=viol,
        grid_slack=problem.grid_slack,
        cell=cell.index,
        cells_solved=len(cells),
        master_history=[sign * v for v in history],
    )


def _complete_nu(problem, grids, x, nu_active, active) -> np.ndarray:
    """Full multiplier vector: atoms outside the nominal's support get their tightest feasible value."""
    nu = np.empty(problem.grouped.n_outcomes + 1)
    nu[-1] = nu_active[-1]
    nu[active] = nu_active[:-1]
    for i in np.setdiff1d(np.arange(problem.grouped.n_outcomes), active):
        nu[i] = grids.best(i, x, nu[-1])[0]
    return nu


def _cell_cutting_surface(problem: RobustProblem, grids: _AtomGrids, cell: VoronoiCell, f: np.ndarray):
    obj = problem.objective
    active = np.flatnonzero(f > 0)
    fa = f[active]
    d, n = problem.feasible_box.dim, active.size
    atoms = problem.grouped.distinct_outcomes
    # cuts at the atoms themselves bound every nu_i from below
    cuts: list[tuple[np.ndarray, int]] = [(atoms[i], j) for j, i in enumerate(active)]
    cost = np.concatenate([np.zeros(d), fa, [problem.radius]])
    bounds = [(lo, hi) for lo, hi in zip(problem.feasible_box.lower, problem.feasible_box.upper)]
    bounds += [(None, None)] * n + [(0.0, None)]
    affine = _AffineModel(problem) if obj.affine_in_x else None
    history: list[float] = []
    for it in range(1, problem.max_iter + 1):
        S = np.array([c[0] for c in cuts])
        owner = np.array([c[1] for c in cuts])
        D = pairwise_distance(S, atoms[active[owner]], problem.ground_p).diagonal()
        if affine is not None:
            z = _master_lp(cost, bounds, cell, S, owner, D, affine, d, n)
        else:
            z = _master_nlp(problem, cost, bounds, cell, S, owner, D, d, n)
        x, nu, lam = z[:d], z[d : d + n], z[-1]
        history.append(float(cost @ z))
        worst = -math.inf
        new_cuts = []
        for j, i in enumerate(active):
            v, s = grids.best(i, x, max(lam, 0.0), nu[j])
            worst = max(worst, v)
            if v > problem.tol:
                new_cuts.append((s, j))
        if not new_cuts:
            log.debug("cell %d converged after %d iterations", cell.index, it)
            return x, float(cost @ z), np.concatenate([nu, [lam]]), active, it, worst, history
        cuts.extend(new_cuts)
    raise ConvergenceError(f"cutting-surface method hit the iteration cap ({problem.max_iter}) in cell {cell.index}")


def _cut_rows(S, owner, D, affine: _AffineModel, d: int, n: int):
    a, B = affine.coefficients(S)
    rows = np.zeros((S.shape[0], d + n + 1))
    rows[:, :d] = B
    rows[np.arange(S.shape[0]), d + owner] = -1.0
    rows[:, -1] = -D
    return rows, -a


def _master_lp(cost, bounds, cell: VoronoiCell, S, owner, D, affine, d, n) -> np.ndarray:
    rows, rhs = _cut_rows(S, owner, D, affine, d, n)
    if cell.A.size:
        cell_rows = np.zeros((cell.A.shape[0], d + n + 1))
        cell_rows[:, :d] = cell.A
        rows = np.vstack([rows, cell_rows])
        rhs = np.concatenate([rhs, cell.b])
    res = linprog(cost, A_ub=rows, b_ub=rhs, bounds=bounds, method="highs")
    if res.status == 2:
        raise SolverError(f"master infeasible in cell {cell.index}")
    if res.status == 3:
        raise SolverError(f"master unbounded in cell {cell.index}")
    if res.status != 0:
        raise SolverError(f"master LP failed in cell {cell.index}: {res.message}")
    return res.x


def _master_nlp(problem, cost, bounds, cell: VoronoiCell, S, owner, D, d, n) -> np.ndarray:
    obj = problem.objective

    def cut_slack(z):
        x, nu, lam = z[:d], z[d : d + n], z[-1]
        return nu[owner] + lam * D - obj.adversarial(x, S)

    cons = [{"type": "ineq", "fun": cut_slack}]
    if cell.A.size:
        cell_jac = np.hstack([-cell.A, np.zeros((cell.A.shape[0], n + 1))])
        cons.append({"type": "ineq", "fun": lambda z: cell.b - cell.A @ z[:d], "jac": lambda z: cell_jac})
    x0 = np.clip(cell.site, problem.feasible_box.lower, problem.feasible_box.upper)
    nu0 = np.array([obj.adversarial(x0, S[owner == j]).max() for j in range(n)])
    z0 = np.concatenate([x0, nu0, [0.0]])
    res = minimize(lambda z: cost @ z, z0, jac=lambda z: cost, bounds=bounds, constraints=cons, method="SLSQP",
                   options={"maxiter": 500, "ftol": 1e-12})
    if not res.success and res.status not in (8, 9):
        raise SolverError(f"convex master failed in cell {cell.index}: {res.message}")
    return res.x


def _solve_by_local_search(problem: RobustProblem) -> SolveResult:
    box = problem.feasible_box
    sign = problem.objective.sign
    evals = 0

    def internal(x) -> float:
        nonlocal evals
        evals += 1
        x = np.clip(x, box.lower, box.upper)
        return sign * worst_case_expectation(problem, x).value

    if box.dim <= 4:
        starts = box.grid(problem.decision_grid_resolution)
    else:
        rng = np.random.default_rng(0)
        starts = box.lower + rng.random((problem.decision_grid_resolution**2, box.dim)) * (box.upper - box.lower)
    start_vals = np.array([internal(x) for x in starts])
    order = np.argsort(start_vals, kind="stable")[: problem.n_starts]
    best_x, best_v = starts[order[0]], start_vals[order[0]]
    history = [float(sign * best_v)]
    for j in order:
        res = minimize(internal, starts[j], method="Nelder-Mead", bounds=list(zip(box.lower, box.upper)),
                       options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 400 * box.dim})
        if res.fun < best_v:
            best_x, best_v = np.clip(res.x, box.lower, box.upper), float(res.fun)
            history.append(float(sign * best_v))
    wc = worst_case_expectation(problem, best_x)
    grids = _AtomGrids(problem)
    nu = np.empty(problem.grouped.n_outcomes + 1)
    nu[-1] = wc.multiplier
    for i in range(problem.grouped.n_outcomes):
        nu[i] = grids.best(i, best_x, wc.multiplier)[0]
    return SolveResult(
        x_hat=best_x,
        value_hat=wc.value,
        dual_vars=sign * nu,
        iterations=evals,
        max_violation=0.0,
        grid_slack=problem.grid_slack,
        master_history=history,
    )
