import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddro.calibration import (
    CalibrationError,
    RadiusParams,
    build_ambiguity,
    calibrate,
    covering_radius,
    grid_slack,
    radius,
    sample_term,
)
from ddro.dataset import Observation, group_by_decision
from ddro.interpolation import NEAREST_NEIGHBOR
from ddro.measures import Box

UNIT = Box.cube(1, 0, 1)


class TestCoveringRadius:
    def test_two_points(self):
        assert covering_radius(UNIT, [[0.2], [0.8]]) == pytest.approx(0.3)

    def test_endpoints(self):
        assert covering_radius(UNIT, [[0.0], [1.0]]) == 0.5

    def test_center_of_square_grid(self):
        box = Box.cube(2, 0, 1)
        got = covering_radius(box, [[0.5, 0.5]], method="grid", resolution=33)
        assert math.sqrt(2) / 2 - grid_slack(box, 33) <= got <= math.sqrt(2) / 2 + 1e-12

    def test_brute_force_1d(self, rng):
        for _ in range(20):
            pts = rng.random((rng.integers(1, 6), 1))
            dense = np.linspace(0, 1, 200_001)
            ref = np.min(np.abs(dense[:, None] - pts[:, 0]), axis=1).max()
            assert covering_radius(UNIT, pts) == pytest.approx(ref, abs=1e-5)

    def test_grid_brackets_exact_1d(self, rng):
        for _ in range(20):
            pts = rng.random((rng.integers(1, 6), 1))
            exact = covering_radius(UNIT, pts)
            g = covering_radius(UNIT, pts, method="grid", resolution=51)
            assert exact - grid_slack(UNIT, 51) <= g <= exact + 1e-12

    def test_exact_1d_requires_d1(self):
        with pytest.raises(CalibrationError):
            covering_radius(Box.cube(2, 0, 1), [[0.5, 0.5]])

    def test_outside_box(self):
        with pytest.raises(CalibrationError):
            covering_radius(UNIT, [[1.5]])


class TestSampleTerm:
    def test_equal_groups(self):
        assert sample_term(0.1, 1.0, [15] * 4) == pytest.approx(math.log(40) / 15, abs=1e-8)
        assert sample_term(0.1, 1.0, [15] * 4) == pytest.approx(0.2459253, abs=1e-7)

    @given(st.floats(0.01, 0.99), st.floats(0.1, 10), st.integers(1, 200))
    def test_single_group(self, beta, c, n):
        expected = max(math.log(c / beta) / n, 0.0)
        assert sample_term(beta, c, [n]) == pytest.approx(expected, abs=1e-8)

    def test_trivially_satisfied(self):
        assert sample_term(0.5, 0.1, [3, 4]) == 0.0

    def test_strict_inequality_at_result(self, rng):
        for _ in range(20):
            counts = rng.integers(1, 30, size=rng.integers(1, 8))
            b = sample_term(0.1, 2.0, counts)
            assert np.exp(-b * counts).sum() < 0.05

    @pytest.mark.parametrize("beta, c, counts", [(0, 1, [3]), (1, 1, [3]), (0.1, 0, [3]), (0.1, 1, [0])])
    def test_rejects(self, beta, c, counts):
        with pytest.raises(CalibrationError):
            sample_term(beta, c, counts)


class TestRadius:
    def test_zero(self):
        g = group_by_decision([Observation(0.5, 1.0)] * 3)
        params = RadiusParams(beta=0.5, k=1, c1=0, c2=0, c3=0.1)
        assert radius(params, g, 0.4) == 0.0

    def test_hand_arithmetic(self):
        # single group of 10 at c3 = 1, beta chosen so that b = 0.04 exactly
        g = group_by_decision([Observation(0.5, float(i)) for i in range(10)])
        beta = math.exp(-0.4)
        params = RadiusParams(beta=beta, k=2, c1=0, c2=1)
        assert radius(params, g, 0.3) == pytest.approx(0.5, abs=1e-8)

    def test_calibrate_report(self):
        g = group_by_decision([Observation(0.2, 1.0), Observation(0.8, 2.0)])
        rep = calibrate(RadiusParams(beta=0.1, k=1), g, UNIT)
        assert rep.covering_radius == pytest.approx(0.3)
        assert rep.sample_term == pytest.approx(math.log(20), abs=1e-8)
        assert rep.radius == pytest.approx(0.3 + math.log(20), abs=1e-8)
        assert rep.to_dict()["params"]["c2"] == 1.0

    def test_params_validation(self):
        with pytest.raises(CalibrationError):
            RadiusParams(beta=0.1, k=0)
        with pytest.raises(CalibrationError):
            RadiusParams(beta=0.1, k=1, c4=0)


def test_ambiguity_radius_zero_is_nominal():
    g = group_by_decision([Observation(0.2, 1.0), Observation(0.8, 2.0)])
    amb = build_ambiguity(NEAREST_NEIGHBOR, g, 0.8, 0.0)
    assert amb.radius == 0 and amb.nominal.atoms.tolist() == [[2.0]]
