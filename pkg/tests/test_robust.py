import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from ddro.dataset import Observation, group_by_decision
from ddro.interpolation import NEAREST_NEIGHBOR, WeightScheme, nominal_distribution
from ddro.measures import Box, expectation, wasserstein1
from ddro.pricing import PricingInstance, solve_pricing
from ddro.robust import (
    ConvergenceError,
    RobustObjective,
    RobustProblem,
    cutting_surface_solve,
    separation_oracle,
    worst_case_expectation,
)

REVENUE_1D = RobustObjective(lambda x, s: float(x[0] * s[0]), lipschitz_cp=1.0, direction="maximize")


def problem_1d(obs, objective=REVENUE_1D, radius=0.5, xi_U=5.0, **kw):
    return RobustProblem(
        objective=objective,
        feasible_box=Box.cube(1, 0, 1),
        outcome_box=Box.cube(1, 0, xi_U),
        grouped=group_by_decision([Observation(x, xi) for x, xi in obs]),
        scheme=NEAREST_NEIGHBOR,
        radius=radius,
        **kw,
    )


def primal_lp_worst_case(problem, x, grid):
    """max over couplings supported on ``grid``: independent oracle for the worst case (adversary sense)."""
    obj = problem.objective
    nominal = nominal_distribution(problem.scheme, x, problem.grouped)
    n, m = len(nominal), grid.shape[0]
    h = obj.adversarial(x, grid)
    D = np.array([[np.linalg.norm(s - a, ord=problem.ground_p) for s in grid] for a in nominal.atoms])
    A_eq = np.zeros((n, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1
    res = linprog(-np.tile(h, n), A_ub=D.ravel()[None, :], b_ub=[problem.radius], A_eq=A_eq,
                  b_eq=nominal.weights, bounds=(0, None), method="highs")
    assert res.status == 0
    return obj.sign * -res.fun


class TestWorstCase:
    def test_radius_zero_is_nominal(self, rng):
        obs = [(0.3, v) for v in rng.uniform(0, 5, 6)]
        p = problem_1d(obs, radius=0.0)
        wc = worst_case_expectation(p, [0.7])
        nominal = nominal_distribution(NEAREST_NEIGHBOR, [0.7], p.grouped)
        assert wc.value == pytest.approx(expectation(nominal, lambda s: 0.7 * s), abs=1e-12)
        assert wasserstein1(wc.witness, nominal) <= 1e-12

    def test_pricing_shift_example(self):
        p = problem_1d([(1.0, 2.0)], radius=0.5)
        assert worst_case_expectation(p, [1.0]).value == pytest.approx(1.5, abs=1e-9)
        # brute force over how much mass moves how far toward zero
        best = min(
            (1 - m) * 2.0 + m * (2.0 - min(0.5 / m, 2.0))
            for m in np.linspace(1e-4, 1, 10_001)
        )
        assert best == pytest.approx(1.5, abs=1e-9)

    def test_saturation_large_radius(self):
        p = problem_1d([(1.0, 2.0), (1.0, 4.0)], radius=50.0)
        assert worst_case_expectation(p, [1.0]).value == pytest.approx(0.0, abs=1e-9)

    def test_matches_primal_lp_1d(self, rng):
        for _ in range(10):
            obs = [(0.5, v) for v in rng.uniform(0, 5, rng.integers(1, 5))]
            r = float(rng.uniform(0, 3))
            p = problem_1d(obs, radius=r)
            x = [float(rng.uniform(0, 1))]
            grid = np.unique(np.concatenate([np.linspace(0, 5, 501), p.grouped.distinct_outcomes[:, 0]]))[:, None]
            ref = primal_lp_worst_case(p, x, grid)
            assert worst_case_expectation(p, x).value == pytest.approx(ref, abs=1e-7)

    def test_nonlinear_within_slack(self, rng):
        obj = RobustObjective(lambda x, s: float((s[0] - 2.0) ** 2 + x[0]), lipschitz_cp=6.0)
        p = problem_1d([(0.5, 1.0), (0.5, 3.5)], objective=obj, radius=0.4)
        grid = np.linspace(0, 5, 5001)[:, None]
        ref = primal_lp_worst_case(p, [0.5], grid)
        got = worst_case_expectation(p, [0.5])
        assert ref - p.grid_slack - 1e-9 <= got.value <= ref + 1e-6

    def test_witness_feasible_and_attains(self, rng):
        T = 2
        obs = [(rng.random(T), rng.uniform(0, 5, T)) for _ in range(4)]
        p = RobustProblem(
            RobustObjective(lambda x, S: S @ x, 1.0, "maximize", batched=True),
            Box.cube(T, 0, 1), Box.cube(T, 0, 5), group_by_decision([Observation(*o) for o in obs]),
            NEAREST_NEIGHBOR, 0.7,
        )
        x = np.array([0.6, 0.9])
        wc = worst_case_expectation(p, x)
        nominal = nominal_distribution(NEAREST_NEIGHBOR, x, p.grouped)
        assert wasserstein1(wc.witness, nominal, 1) <= p.radius + 1e-9
        assert expectation(wc.witness, lambda s: float(s @ x)) == pytest.approx(wc.value, abs=1e-7)

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=4), st.floats(0, 2), st.floats(0, 2), st.floats(0, 1))
    def test_monotone_and_lipschitz(self, xis, r1, r2, x):
        lo, hi = sorted((r1, r2))
        obs = [(0.5, v) for v in xis]
        v_lo = worst_case_expectation(problem_1d(obs, radius=lo), [x]).value
        v_hi = worst_case_expectation(problem_1d(obs, radius=hi), [x]).value
        nominal = float(np.mean(xis)) * x
        assert v_hi <= v_lo + 1e-9
        assert nominal - v_hi <= 1.0 * hi + 1e-9
        assert v_hi <= nominal + 1e-9


class TestSeparation:
    def test_slack_multipliers(self, rng):
        p = problem_1d([(0.5, 1.0), (0.5, 3.0)], objective=RobustObjective(lambda x, s: float(x[0] * s[0]), 1.0))
        nu = np.array([0.5 * 5.0, 0.5 * 5.0, 0.0])
        assert separation_oracle(p, [0.5], nu).violation <= 0

    def test_constant_objective(self):
        p = problem_1d([(0.5, 1.0), (0.5, 3.0)], objective=RobustObjective(lambda x, s: 1.0, 1.0))
        sep = separation_oracle(p, [0.5], np.zeros(3))
        assert sep.violation == pytest.approx(1.0)

    def test_sign_check(self):
        p = problem_1d([(0.5, 1.0)])
        with pytest.raises(ValueError):
            separation_oracle(p, [0.5], np.array([0.0, 1.0]))

    def test_at_pricing_solution(self, rng):
        obs = [(rng.choice([0.25, 0.75], 2), rng.uniform(0, 5, 2)) for _ in range(6)]
        g = group_by_decision([Observation(*o) for o in obs])
        inst = PricingInstance(2, 1.0, 5.0, g, 0.6)
        sol = solve_pricing(inst)
        prob = inst.robust_problem()
        sep = separation_oracle(prob, sol.x_hat, sol.dual_vars)
        assert sep.violation <= 1e-6


class TestCuttingSurface:
    def test_single_outcome_radius_zero(self):
        obj = RobustObjective(lambda x, s: float((x[0] - 0.3) ** 2 * s[0]), lipschitz_cp=1.0)
        p = problem_1d([(0.1, 2.0), (0.9, 2.0)], objective=obj, radius=0.0)
        res = cutting_surface_solve(p)
        assert res.x_hat[0] == pytest.approx(0.3, abs=1e-4)
        assert res.value_hat == pytest.approx(0.0, abs=1e-7)

    def test_outcome_independent(self):
        obj = RobustObjective(lambda x, s: float(-(x[0] - 0.6) ** 2 + 1.0), lipschitz_cp=1e-9, direction="maximize")
        for r in (0.0, 1.0, 3.0):
            res = cutting_surface_solve(problem_1d([(0.2, 1.0), (0.8, 4.0)], objective=obj, radius=r))
            assert res.value_hat == pytest.approx(1.0, abs=1e-6)
            assert res.dual_vars[-1] == pytest.approx(0.0, abs=1e-6)

    def test_matches_direct_pricing(self, rng):
        obs = [(rng.choice([0.2, 0.6, 1.0], 2), rng.uniform(0, 5, 2)) for _ in range(8)]
        inst = PricingInstance(2, 1.0, 5.0, group_by_decision([Observation(*o) for o in obs]), 0.8)
        direct = solve_pricing(inst)
        cs = cutting_surface_solve(inst.robust_problem(outcome_grid_resolution=11))
        assert cs.value_hat == pytest.approx(direct.value_hat, abs=1e-4 + cs.grid_slack)

    def test_master_history_monotone(self, rng):
        obs = [(0.5, v) for v in rng.uniform(0, 5, 4)]
        res = cutting_surface_solve(problem_1d(obs, radius=0.3))
        # maximizing outer problem: master upper bounds can only tighten
        assert all(b <= a + 1e-9 for a, b in zip(res.master_history, res.master_history[1:]))
        assert res.value_hat == pytest.approx(res.master_history[-1])

    def test_inverse_distance_local_search(self):
        scheme = WeightScheme("inverse-distance", lipschitz_c1=1.0)
        g = group_by_decision([Observation(0.2, 3.0), Observation(0.8, 1.0)])
        p = RobustProblem(REVENUE_1D, Box.cube(1, 0, 1), Box.cube(1, 0, 5), g, scheme, 0.2)
        res = cutting_surface_solve(p)
        grid = np.linspace(0, 1, 401)
        ref = max(worst_case_expectation(p, [x]).value for x in grid)
        assert res.value_hat >= ref - 1e-6

    def test_iteration_cap(self):
        p = problem_1d([(0.5, 1.0), (0.5, 3.0)], radius=0.3, max_iter=1)
        with pytest.raises(ConvergenceError):
            cutting_surface_solve(p)


def test_problem_validation():
    with pytest.raises(ValueError):
        problem_1d([(0.5, 1.0)], radius=-1)
    with pytest.raises(ValueError):
        RobustObjective(lambda x, s: 0.0, lipschitz_cp=0.0)
    assert math.isclose(problem_1d([(0.5, 1.0)]).lambda_max, 2.0)
