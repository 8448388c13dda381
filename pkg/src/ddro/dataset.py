"""Offline (decision, outcome) datasets and their grouping by decision."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .measures import Box, DiscreteMeasure, make_measure


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    decision: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        for name in ("decision", "outcome"):
            arr = np.atleast_1d(np.array(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class GroupedDataset:
    """Observations grouped by distinct decision.

    ``outcome_counts[i, m]`` is the number of observations taken at decision
    ``i`` whose outcome equals ``distinct_outcomes[m]``; every derived quantity
    (group counts, empirical measures, interpolation coefficients) is read off
    this matrix.
    """

    distinct_decisions: np.ndarray
    distinct_outcomes: np.ndarray
    outcome_counts: np.ndarray

    def __post_init__(self):
        for name in ("distinct_decisions", "distinct_outcomes", "outcome_counts"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_decisions(self) -> int:
        return self.distinct_decisions.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.distinct_outcomes.shape[0]

    @property
    def decision_dim(self) -> int:
        return self.distinct_decisions.shape[1]

    @property
    def outcome_dim(self) -> int:
        return self.distinct_outcomes.shape[1]

    @property
    def group_counts(self) -> np.ndarray:
        return self.outcome_counts.sum(axis=1)

    @property
    def total_count(self) -> int:
        return int(self.outcome_counts.sum())

    @property
    def group_weights(self) -> np.ndarray:
        """Row ``i`` holds the weights of the i-th empirical measure on ``distinct_outcomes``."""
        return self.outcome_counts / self.group_counts[:, None]

    def group_measure(self, i: int) -> DiscreteMeasure:
        return make_measure(self.distinct_outcomes, self.group_weights[i])

    @property
    def group_measures(self) -> tuple[DiscreteMeasure, ...]:
        return tuple(self.group_measure(i) for i in range(self.n_decisions))

    def summary(self) -> dict:
        return {
            "total_count": self.total_count,
            "n_decisions": self.n_decisions,
            "n_outcomes": self.n_outcomes,
            "distinct_decisions": self.distinct_decisions.tolist(),
            "group_counts": self.group_counts.tolist(),
        }


def group_by_decision(observations: Sequence[Observation]) -> GroupedDataset:
    if len(observations) == 0:
        raise DatasetError("empty dataset")
    X = np.stack([o.decision for o in observations])
    Y = np.stack([o.outcome for o in observations])
    # np.unique sorts lexicographically, so group indices do not depend on row order
    decisions, dec_idx = np.unique(X, axis=0, return_inverse=True)
    outcomes, out_idx = np.unique(Y, axis=0, return_inverse=True)
    counts = np.zeros((decisions.shape[0], outcomes.shape[0]), dtype=np.int64)
    np.add.at(counts, (dec_idx.ravel(), out_idx.ravel()), 1)
    return GroupedDataset(decisions, outcomes, counts)


def _check_in_box(value: np.ndarray, box: Box | None, what: str, row: int):
    if box is None:
        return
    for j, v in enumerate(value):
        if not (box.lower[j] <= v <= box.upper[j]):
            raise DatasetError(
                f"row {row}: {what} coordinate {j + 1} = {v} outside [{box.lower[j]}, {box.upper[j]}]"
            )


def load_dataset(
    path: str | Path,
    d: int,
    k: int,
    feasible_box: Box | None = None,
    outcome_box: Box | None = None,
    fmt: str | None = None,
    decimals: int | None = None,
) -> list[Observation]:
    """Read observations from CSV (``x1..xd,xi1..xik`` header) or JSON.

    ``decimals`` rounds decisions on load so that near-identical logged
    decisions fall into one group; by default decisions are compared exactly.
    """
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "csv"
    if fmt == "csv":
        rows = _read_csv(path, d, k)
    elif fmt == "json":
        rows = _read_json(path, d, k)
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")
    if not rows:
        raise DatasetError("empty dataset")
    obs = []
    for line, x, xi in rows:
        if decimals is not None:
            x = np.round(x, decimals)
        _check_in_box(x, feasible_box, "decision", line)
        _check_in_box(xi, outcome_box, "outcome", line)
        obs.append(Observation(x, xi))
    return obs


def _read_csv(path: Path, d: int, k: int):
    expected = [f"x{i + 1}" for i in range(d)] + [f"xi{i + 1}" for i in range(k)]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty dataset") from None
        header = [h.strip() for h in header]
        if header != expected:
            raise DatasetError(f"header {header} inconsistent with d={d}, k={k}; expected {expected}")
        rows = []
        for rec in reader:
            line = reader.line_num
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != d + k:
                raise DatasetError(f"line {line}: expected {d + k} columns, got {len(rec)}")
            try:
                vals = np.array([float(c) for c in rec])
            except ValueError as exc:
                raise DatasetError(f"line {line}: {exc}") from None
            if not np.all(np.isfinite(vals)):
                raise DatasetError(f"line {line}: non-finite value")
            rows.append((line, vals[:d], vals[d:]))
    return rows


def _read_json(path: Path, d: int, k: int):
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, list):
        raise DatasetError("JSON dataset must be an array of {x, xi} objects")
    rows = []
    for n, rec in enumerate(data, start=1):
        try:
            x = np.asarray(rec["x"], dtype=float).ravel()
            xi = np.asarray(rec["xi"], dtype=float).ravel()
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"record {n}: {exc!r}") from None
        if x.shape[0] != d or xi.shape[0] != k:
            raise DatasetError(f"record {n}: expected |x|={d}, |xi|={k}")
        rows.append((n, x, xi))
    return rows


def write_dataset_csv(path: str | Path, observations: Sequence[Observation]) -> None:
    d = observations[0].decision.shape[0]
    k = observations[0].outcome.shape[0]
    header = [f"x{i + 1}" for i in range(d)] + [f"xi{i + 1}" for i in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for o in observations:
            writer.writerow([repr(float(v)) for v in (*o.decision, *o.outcome)])
