import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddro.dataset import DatasetError, Observation, group_by_decision, load_dataset, write_dataset_csv
from ddro.measures import Box


def obs(rows):
    return [Observation(x, xi) for x, xi in rows]


def test_load_csv(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x1,xi1\n0.2,1.0\n0.2,2.0\n")
    data = load_dataset(f, 1, 1)
    assert len(data) == 2
    assert data[1].outcome.tolist() == [2.0]


def test_empty(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x1,xi1\n")
    with pytest.raises(DatasetError, match="empty dataset"):
        load_dataset(f, 1, 1)


def test_out_of_box(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x1,xi1\n0.2,1.0\n0.3,9.0\n")
    with pytest.raises(DatasetError, match="row 3: outcome coordinate 1"):
        load_dataset(f, 1, 1, outcome_box=Box.cube(1, 0, 5))


def test_bad_header(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x1,x2,xi1\n0.2,0.1,1.0\n")
    with pytest.raises(DatasetError, match="header"):
        load_dataset(f, 1, 1)


def test_bad_value_reports_line(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x1,xi1\n0.2,1.0\n0.2,abc\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_dataset(f, 1, 1)


def test_json(tmp_path):
    f = tmp_path / "d.json"
    f.write_text('[{"x": [0.2], "xi": [1.0]}, {"x": [0.8], "xi": [2.0]}]')
    assert len(load_dataset(f, 1, 1)) == 2


def test_decimals_merge_groups(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x1,xi1\n0.2000000001,1.0\n0.2,2.0\n")
    assert group_by_decision(load_dataset(f, 1, 1, decimals=6)).n_decisions == 1


def test_roundtrip(tmp_path, rng):
    rows = obs((rng.random(2), rng.random(3)) for _ in range(7))
    write_dataset_csv(tmp_path / "d.csv", rows)
    back = load_dataset(tmp_path / "d.csv", 2, 3)
    assert all(np.array_equal(a.decision, b.decision) and np.array_equal(a.outcome, b.outcome) for a, b in zip(rows, back))


class TestGrouping:
    def test_hand_example(self):
        g = group_by_decision(obs([(0.2, 1.0), (0.2, 2.0), (0.8, 1.0)]))
        assert g.n_decisions == 2 and g.n_outcomes == 2
        assert g.group_counts.tolist() == [2, 1]
        m1, m2 = g.group_measures
        assert m1.atoms.ravel().tolist() == [1.0, 2.0] and m1.weights.tolist() == [0.5, 0.5]
        assert m2.atoms.ravel().tolist() == [1.0] and m2.weights.tolist() == [1.0]

    def test_single(self):
        g = group_by_decision(obs([(0.5, 3.0)]))
        assert g.n_decisions == 1 and g.group_measure(0).atoms.tolist() == [[3.0]]

    def test_all_identical(self):
        g = group_by_decision(obs([(0.5, 3.0)] * 4))
        assert (g.n_decisions, g.n_outcomes, g.total_count) == (1, 1, 4)

    def test_empty(self):
        with pytest.raises(DatasetError, match="empty"):
            group_by_decision([])

    @given(st.lists(st.tuples(st.sampled_from([0.1, 0.5, 0.9]), st.integers(0, 4)), min_size=1, max_size=25),
           st.randoms())
    def test_permutation_invariant(self, rows, rnd):
        data = obs((x, float(xi)) for x, xi in rows)
        shuffled = list(data)
        rnd.shuffle(shuffled)
        a, b = group_by_decision(data), group_by_decision(shuffled)
        assert np.array_equal(a.outcome_counts, b.outcome_counts)
        assert np.array_equal(a.distinct_decisions, b.distinct_decisions)
        assert a.total_count == len(rows) == int(a.group_counts.sum())
