import numpy as np
import pytest

from ddro.dataset import Observation, group_by_decision
from ddro.interpolation import NEAREST_NEIGHBOR, weights
from ddro.measures import Box
from ddro.voronoi import voronoi_cells


def test_two_points_bisector():
    a, b = voronoi_cells([[0.2], [0.8]], Box.cube(1, 0, 1))
    assert a.contains([0.5]) and b.contains([0.5])
    assert a.contains([0.0]) and not a.contains([0.51])
    assert b.contains([1.0]) and not b.contains([0.49])


def test_single_point_is_box():
    (c,) = voronoi_cells([[0.3, 0.3]], Box.cube(2, 0, 1))
    assert c.A.shape[0] == 0 and c.contains([1, 1]) and c.residual([1.5, 0]) == pytest.approx(0.5)


def test_collinear_middle_cell(rng):
    sites = [[0.2, 0.5], [0.5, 0.5], [0.8, 0.5]]
    cells = voronoi_cells(sites, Box.cube(2, 0, 1))
    assert cells[1].A.shape[0] == 2
    normals = cells[1].A / np.linalg.norm(cells[1].A, axis=1, keepdims=True)
    assert abs(abs(normals[0] @ normals[1]) - 1) < 1e-12
    g = group_by_decision([Observation(s, 0.0) for s in sites])
    for x in rng.random((500, 2)):
        nn = int(np.argmax(weights(NEAREST_NEIGHBOR, x, g)))
        inside = [c.index for c in cells if c.contains(x, tol=0)]
        assert nn in inside


def test_non_euclidean_rejected():
    with pytest.raises(ValueError):
        voronoi_cells([[0.2]], Box.cube(1, 0, 1), metric=1.0)
