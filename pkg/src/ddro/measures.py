"""Finitely supported probability measures and the exact 1-Wasserstein distance."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

# POT probes every installed array backend on import (tensorflow, torch, jax);
# only numpy is used here.
for _backend in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
from ot.lp import emd as _network_simplex  # noqa: E402

WEIGHT_TOL = 1e-12


class MeasureError(ValueError):
    """Invalid input to a measure constructor or distance."""


class TransportError(RuntimeError):
    """The transportation solver failed on otherwise valid input."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod_j [lower_j, upper_j]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise MeasureError("box bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise MeasureError("box bounds must be finite")
        if np.any(hi < lo):
            raise MeasureError("box upper bound below lower bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, lower: float, upper: float) -> "Box":
        return cls(np.full(dim, float(lower)), np.full(dim, float(upper)))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, point, tol: float = 1e-12) -> bool:
        pt = np.asarray(point, dtype=float)
        return bool(np.all(pt >= self.lower - tol) and np.all(pt <= self.upper + tol))

    def diameter(self, p: float = 2.0) -> float:
        return norm(self.upper - self.lower, p)

    def grid_axes(self, resolution: int) -> list[np.ndarray]:
        return [np.linspace(lo, hi, resolution) for lo, hi in zip(self.lower, self.upper)]

    def grid(self, resolution: int) -> np.ndarray:
        """Regular grid with ``resolution`` points per axis, shape (resolution**dim, dim)."""
        mesh = np.meshgrid(*self.grid_axes(resolution), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_diameter(self, resolution: int, p: float = 2.0) -> float:
        """Diameter of one cell of :meth:`grid` under the p-norm."""
        if resolution < 2:
            return self.diameter(p)
        return norm((self.upper - self.lower) / (resolution - 1), p)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def _check_p(p: float) -> float:
    p = float(p)
    if math.isnan(p) or p < 1:
        raise MeasureError(f"norm exponent must be >= 1 or inf, got {p}")
    return p


def norm(v, p: float = 2.0) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=float).ravel(), ord=_check_p(p)))


def pairwise_distance(a: np.ndarray, b: np.ndarray, p: float = 1.0) -> np.ndarray:
    """Matrix of p-norm distances between the rows of ``a`` and ``b``."""
    p = _check_p(p)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise MeasureError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if math.isinf(p):
        return cdist(a, b, metric="chebyshev")
    if p == 1.0:
        return cdist(a, b, metric="cityblock")
    if p == 2.0:
        return cdist(a, b, metric="euclidean")
    return cdist(a, b, metric="minkowski", p=p)


def ground_distance(s1, s2, p: float = 1.0) -> float:
    s1 = np.atleast_1d(np.asarray(s1, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    if s1.shape != s2.shape:
        raise MeasureError(f"dimension mismatch: {s1.shape} vs {s2.shape}")
    return norm(s1 - s2, p)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure on finitely many distinct atoms.

    Build instances through :func:`make_measure`, which normalizes weights and
    merges duplicate atoms; the constructor itself only freezes the arrays.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for name in ("atoms", "weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


def make_measure(atoms, weights, box: Box | None = None) -> DiscreteMeasure:
    """Normalized, deduplicated measure from raw atoms and weights.

    Weights down to ``-1e-12`` are tolerated (clamped to zero) before
    renormalizing; zero-weight atoms are dropped.
    """
    if isinstance(atoms, np.ndarray):
        arr = atoms.astype(float)
    else:
        rows = [np.atleast_1d(np.asarray(a, dtype=float)) for a in atoms]
        if not rows:
            raise MeasureError("empty atom list")
        if len({r.shape for r in rows}) != 1:
            raise MeasureError("dimension mismatch among atoms")
        arr = np.stack(rows)
    if arr.ndim == 1:
        arr = arr[:, None]
    w = np.asarray(weights, dtype=float).ravel()
    if arr.shape[0] == 0:
        raise MeasureError("empty atom list")
    if arr.shape[0] != w.shape[0]:
        raise MeasureError(f"{arr.shape[0]} atoms but {w.shape[0]} weights")
    if not np.all(np.isfinite(arr)) or not np.all(np.isfinite(w)):
        raise MeasureError("atoms and weights must be finite")
    if np.any(w < -WEIGHT_TOL):
        raise MeasureError(f"negative weight {w.min()}")
    if box is not None:
        bad = [i for i, a in enumerate(arr) if not box.contains(a)]
        if bad:
            raise MeasureError(f"atom {bad[0]} lies outside the outcome box")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise MeasureError("weights sum to zero")
    uniq, inverse = np.unique(arr, axis=0, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=w, minlength=uniq.shape[0])
    keep = merged > 0
    merged = merged[keep] / merged[keep].sum()
    return DiscreteMeasure(uniq[keep], merged)


def dirac(point) -> DiscreteMeasure:
    return make_measure([point], [1.0])


def uniform_empirical(samples: np.ndarray) -> DiscreteMeasure:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    return make_measure(samples, np.full(samples.shape[0], 1.0 / samples.shape[0]))


def transport_plan(P1: DiscreteMeasure, P2: DiscreteMeasure, p: float = 1.0) -> tuple[float, np.ndarray]:
    """Optimal coupling and its cost for the ground metric ``||.||_p``."""
    if P1.dim != P2.dim:
        raise MeasureError(f"dimension mismatch: {P1.dim} vs {P2.dim}")
    cost = pairwise_distance(P1.atoms, P2.atoms, p)
    if len(P1) == 1 or len(P2) == 1:
        plan = np.outer(P1.weights, P2.weights)
        return float(np.sum(plan * cost)), plan
    a = np.ascontiguousarray(P1.weights)
    b = np.ascontiguousarray(P2.weights)
    # emd insists on equal total mass to ~1e-7; renormalize away rounding
    b = b * (a.sum() / b.sum())
    plan, log = _network_simplex(a, b, cost, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise TransportError(f"network simplex failed: {log['warning']}")
    return float(np.sum(plan * cost)), plan


def wasserstein1(P1: DiscreteMeasure, P2: DiscreteMeasure, p: float = 1.0) -> float:
    """Exact 1-Wasserstein distance with ground metric ``||.||_p``."""
    return transport_plan(P1, P2, p)[0]


def expectation(P: DiscreteMeasure, f: Callable[[np.ndarray], float]) -> float:
    values = np.array([float(f(a if a.shape[0] > 1 else a[0])) for a in P.atoms])
    if not np.all(np.isfinite(values)):
        raise MeasureError("integrand is not finite on every atom")
    return float(values @ P.weights)


def mixture(measures: Sequence[DiscreteMeasure], coeffs) -> DiscreteMeasure:
    coeffs = np.asarray(coeffs, dtype=float)
    atoms = np.concatenate([m.atoms for m in measures])
    weights = np.concatenate([c * m.weights for c, m in zip(coeffs, measures)])
    return make_measure(atoms, weights)
