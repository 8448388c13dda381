"""Euclidean Voronoi cells of the observed decisions, clipped to the feasible box."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import Box


@dataclass(frozen=True)
class VoronoiCell:
    """Polyhedron ``{x in box : A x <= b}``; nearest-neighbor weights are constant inside."""

    index: int
    site: np.ndarray
    A: np.ndarray
    b: np.ndarray
    box: Box

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if not self.box.contains(x, tol):
            return False
        return bool(np.all(self.A @ x <= self.b + tol)) if self.A.size else True

    def residual(self, x) -> float:
        """Largest violation of the cell and box inequalities at ``x`` (0 if inside)."""
        x = np.asarray(x, dtype=float)
        parts = [self.box.lower - x, x - self.box.upper]
        if self.A.size:
            parts.append(self.A @ x - self.b)
        return float(max(0.0, max(float(np.max(p)) for p in parts)))


def voronoi_cells(distinct_decisions, feasible_box: Box, metric: float = 2.0) -> list[VoronoiCell]:
    """One halfspace list per site: ``2 (x_j' - x_j)^T x <= |x_j'|^2 - |x_j|^2`` for all j' != j."""
    if metric != 2.0:
        raise ValueError("Voronoi cells as halfspace lists require the Euclidean decision metric")
    sites = np.atleast_2d(np.asarray(distinct_decisions, dtype=float))
    sq = np.einsum("ij,ij->i", sites, sites)
    cells = []
    for j, site in enumerate(sites):
        others = np.arange(sites.shape[0]) != j
        A = 2.0 * (sites[others] - site)
        b = sq[others] - sq[j]
        cells.append(VoronoiCell(j, site.copy(), A, b, feasible_box))
    return cells
