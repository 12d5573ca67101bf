import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmadapt.errors import MetricError
from hmadapt.metrics import EvalReport, auc_fraction, midranks, roc_auc, roc_curve, seeded_eval

from oracles import auc_pairs, roc_sweep


def random_instance(r, max_n=200):
    n = int(r.integers(2, max_n + 1))
    y = r.integers(0, 2, n)
    y[0], y[1] = 0, 1
    s = r.integers(0, int(r.integers(2, 30)), n) / 7.0
    return s, y


class TestRocAuc:
    def test_perfect(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert roc_auc(np.ones(7), [0, 1, 0, 1, 1, 0, 0]) == 0.5

    def test_reversed(self):
        assert roc_auc([3, 2, 1], [1, 0, 0]) == 1.0 and roc_auc([3, 2, 1], [0, 1, 1]) == 0.0

    @pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0], []])
    def test_single_class(self, labels):
        with pytest.raises(MetricError):
            roc_auc(np.zeros(len(labels)), labels)

    def test_midranks(self):
        assert midranks(np.array([10, 20, 10, 30, 20, 20])).tolist() == [1.5, 4, 1.5, 6, 4, 4]

    def test_matches_pairwise_oracle(self):
        r = np.random.default_rng(2024)
        for _ in range(500):
            s, y = random_instance(r)
            assert roc_auc(s, y) == auc_pairs(s.tolist(), y.tolist())

    def test_negation_exact(self):
        r = np.random.default_rng(3)
        for _ in range(300):
            s, y = random_instance(r)
            assert auc_fraction(s, y) == 1 - auc_fraction(-s, y)
            assert abs(roc_auc(s, y) - (1 - roc_auc(-s, y))) <= 2 ** -52

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_invariance(self, seed):
        s, y = random_instance(np.random.default_rng(seed))
        assert roc_auc(s, y) == roc_auc(np.exp(s) * 3 + 1, y) == roc_auc(s ** 3, y)


class TestRocCurve:
    def test_perfect_passes_through_corner(self):
        c = roc_curve([0.1, 0.4, 0.6, 0.9], [0, 0, 1, 1])
        assert (0.0, 1.0) in zip(c.fpr.tolist(), c.tpr.tolist())

    def test_enumerated_sweep(self):
        c = roc_curve([0.9, 0.8, 0.8, 0.1], [1, 0, 1, 0])
        assert list(c.rows()) == [(0.0, 0.0, float("inf")), (0.0, 0.5, 0.9), (0.5, 1.0, 0.8), (1.0, 1.0, 0.1)]

    def test_matches_sweep_oracle(self):
        r = np.random.default_rng(9)
        for _ in range(100):
            s, y = random_instance(r, 60)
            c = roc_curve(s, y)
            assert list(zip(c.fpr.tolist(), c.tpr.tolist())) == roc_sweep(s.tolist(), y.tolist())

    def test_area_equals_auc(self):
        r = np.random.default_rng(10)
        for _ in range(500):
            s, y = random_instance(r)
            c = roc_curve(s, y)
            assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
            assert abs(c.area() - roc_auc(s, y)) <= 1e-12

    def test_random_labels_near_half(self):
        r = np.random.default_rng(1)
        s, y = r.random(20_000), r.integers(0, 2, 20_000)
        assert abs(roc_curve(s, y).area() - 0.5) <= 0.05


class FixedSet:
    def __init__(self, x, y, jitter=0.0):
        self.x, self.y, self.jitter = x, y, jitter

    def __len__(self):
        return len(self.y)

    def extract_all(self, rng):
        return self.x + self.jitter * rng.random(self.x.shape), self.y


class TestSeededEval:
    def test_deterministic_set_has_zero_std(self):
        ds = FixedSet(np.array([0.1, 0.7, 0.4, 0.9]), np.array([0, 1, 0, 1]))
        rep = seeded_eval(lambda x: x, ds, [0, 1, 2])
        assert rep.aucs == [1.0, 1.0, 1.0] and rep.std == 0.0

    def test_population_std(self):
        rep = EvalReport([1, 2, 3], [0.7, 0.8, 0.9])
        assert rep.std == pytest.approx(np.sqrt(2 / 3) * 0.1, abs=1e-15)
        assert rep.summary() == "0.800 ± 0.082"

    def test_random_placement_varies(self):
        ds = FixedSet(np.array([0.1, 0.7, 0.4, 0.5] * 5), np.array([0, 1, 0, 1] * 5), jitter=0.5)
        rep = seeded_eval(lambda x: x, ds, [0, 1, 2])
        assert rep.std > 0 and len(rep.aucs) == 3

    def test_one_class_set(self):
        with pytest.raises(MetricError):
            seeded_eval(lambda x: x, FixedSet(np.ones(3), np.ones(3, int)), [0])

    def test_save(self, tmp_path):
        ds = FixedSet(np.array([0.1, 0.7, 0.4]), np.array([0, 1, 1]))
        rep = seeded_eval(lambda x: x, ds, [5], metadata={"mode": "test_only"})
        rep.save(tmp_path / "r.json", tmp_path / "roc.csv")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["aucs"] == [1.0] and d["metadata"]["mode"] == "test_only" and d["std_kind"] == "population"
        rows = list(csv.reader(open(tmp_path / "roc.csv")))
        assert rows[0] == ["fpr", "tpr", "threshold"] and rows[1] == ["0.0", "0.0", "inf"]
        assert EvalReport.from_json(d).aucs == rep.aucs
