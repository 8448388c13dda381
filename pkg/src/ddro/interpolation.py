"""Decision-dependent nominal distributions by interpolating group empirical measures."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .dataset import GroupedDataset
from .measures import DiscreteMeasure, make_measure, pairwise_distance

SchemeKind = Literal["nearest-neighbor", "inverse-distance"]


@dataclass(frozen=True)
class WeightScheme:
    """How interpolation weights over the observed decisions are formed.

    ``lipschitz_c1`` is the declared Wasserstein-Lipschitz constant of the
    scheme at the observed decisions.  It is exactly 0 for nearest-neighbor;
    for inverse-distance weighting it is a user assertion, used only when
    calibrating the ambiguity radius.
    """

    kind: SchemeKind = "nearest-neighbor"
    shepard_exponent: float = 2.0
    lipschitz_c1: float = 0.0
    decision_metric: float = 2.0

    def __post_init__(self):
        if self.kind not in ("nearest-neighbor", "inverse-distance"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "nearest-neighbor" and self.lipschitz_c1 != 0:
            raise ValueError("nearest-neighbor interpolation has lipschitz_c1 = 0")
        if self.kind == "inverse-distance" and self.shepard_exponent < 1:
            raise ValueError("shepard_exponent must be >= 1")
        if self.lipschitz_c1 < 0:
            raise ValueError("lipschitz_c1 must be nonnegative")
        if self.decision_metric < 1:
            raise ValueError("decision_metric must be a norm exponent >= 1")

    @property
    def c1_certified(self) -> bool:
        return self.kind == "nearest-neighbor"


NEAREST_NEIGHBOR = WeightScheme()


def decision_distances(scheme: WeightScheme, x, grouped: GroupedDataset) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return pairwise_distance(x[None, :], grouped.distinct_decisions, scheme.decision_metric)[0]


def weights(scheme: WeightScheme, x, grouped: GroupedDataset) -> np.ndarray:
    if grouped.n_decisions == 0:
        raise ValueError("empty grouped dataset")
    dist = decision_distances(scheme, x, grouped)
    w = np.zeros(grouped.n_decisions)
    at_node = np.flatnonzero(dist == 0.0)
    if scheme.kind == "nearest-neighbor" or at_node.size:
        # argmin returns the first minimizer: lowest group index wins ties
        w[int(np.argmin(dist))] = 1.0
        return w
    # shift by the minimum before exponentiating to avoid overflow near nodes
    logs = -scheme.shepard_exponent * np.log(dist)
    e = np.exp(logs - logs.max())
    return e / e.sum()


def nominal_coefficients(scheme: WeightScheme, x, grouped: GroupedDataset) -> np.ndarray:
    """Weights of the nominal distribution on ``grouped.distinct_outcomes``."""
    return weights(scheme, x, grouped) @ grouped.group_weights


def nominal_distribution(scheme: WeightScheme, x, grouped: GroupedDataset) -> DiscreteMeasure:
    return make_measure(grouped.distinct_outcomes, nominal_coefficients(scheme, x, grouped))
