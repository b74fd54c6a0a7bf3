import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from m2iosr.errors import ConfigError
from m2iosr.evaluation import (
    UnknownPool,
    confusion_matrix,
    macro_f1,
    openness,
    sweep_from_predictions,
    sweep_openness,
    write_curve_csv,
)
from m2iosr.inference import UNKNOWN, OpenSetPrediction

U = UNKNOWN


class TestOpenness:
    def test_reference_range(self):
        assert openness(10, 20) == pytest.approx(0.18350, abs=1e-3)
        assert openness(10, 110) == pytest.approx(0.59175, abs=1e-3)

    def test_closed_set(self):
        assert openness(6, 6) == 0.0

    @pytest.mark.parametrize("args", [(0, 5), (5, 4)])
    def test_preconditions(self, args):
        with pytest.raises(ConfigError):
            openness(*args)

    @given(st.integers(1, 50), st.integers(0, 200))
    def test_strictly_increasing(self, c, extra):
        assert openness(c, c + extra + 1) > openness(c, c + extra)
        assert 0.0 <= openness(c, c + extra) < 1.0


class TestMacroF1:
    def test_hand_case(self):
        report = macro_f1([0, 1, 1, U], [0, 0, 1, U], 2)
        assert report.macro_f1 == pytest.approx(7 / 9, abs=1e-9)
        assert report.per_class_f1 == pytest.approx({"0": 2 / 3, "1": 2 / 3, "unknown": 1.0})
        assert report.confusion == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]

    def test_perfect(self):
        truth = [0, 1, 2, U, U]
        assert macro_f1(truth, truth, 3).macro_f1 == 1.0

    def test_all_unknown_predictions(self):
        report = macro_f1([U] * 4, [0, 1, 0, 1], 2)
        assert report.macro_f1 == 0.0
        assert set(report.per_class_f1) == {"0", "1", "unknown"}

    def test_absent_class_excluded(self):
        report = macro_f1([0, 1], [0, 1], 4)
        assert set(report.per_class_f1) == {"0", "1"}
        assert report.macro_f1 == 1.0

    def test_accepts_prediction_objects(self):
        preds = [OpenSetPrediction(0, 0.99), OpenSetPrediction(U, 0.5)]
        assert macro_f1(preds, [0, U], 2).macro_f1 == 1.0

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            macro_f1([0, 5], [0, 1], 2)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            macro_f1([0], [0, 1], 2)

    def test_report_fields_and_json(self):
        report = macro_f1([0, 1, U], [0, U, U], 2, openness_value=0.2)
        assert (report.n_samples, report.n_known, report.n_unknown) == (3, 1, 2)
        assert report.closed_set_accuracy == 1.0
        assert json.loads(report.to_json())["openness"] == 0.2


labels_k = st.integers(2, 6).flatmap(
    lambda k: st.tuples(
        st.just(k),
        st.lists(st.tuples(st.integers(-1, k - 1), st.integers(-1, k - 1)), min_size=1, max_size=60),
    )
)


@settings(max_examples=200, deadline=None)
@given(labels_k)
def test_matches_sklearn(case):
    k, pairs = case
    truth, preds = (np.array(v) for v in zip(*pairs))
    present = sorted(set(truth) | set(preds))
    expected = f1_score(truth, preds, labels=present, average="macro", zero_division=0)
    assert macro_f1(preds, truth, k).macro_f1 == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(labels_k, st.randoms(use_true_random=False))
def test_confusion_sums_and_invariances(case, rnd):
    k, pairs = case
    truth, preds = (np.array(v) for v in zip(*pairs))
    cm = confusion_matrix(truth, preds, k)
    idx = lambda a: np.where(a == U, k, a)
    assert np.array_equal(cm.sum(axis=1), np.bincount(idx(truth), minlength=k + 1))
    assert np.array_equal(cm.sum(axis=0), np.bincount(idx(preds), minlength=k + 1))
    assert cm.sum() == len(truth)

    base = macro_f1(preds, truth, k).macro_f1
    order = list(range(len(truth)))
    rnd.shuffle(order)
    assert macro_f1(preds[order], truth[order], k).macro_f1 == pytest.approx(base, abs=1e-12)

    perm = list(range(k))
    rnd.shuffle(perm)
    relabel = lambda a: np.array([v if v == U else perm[v] for v in a])
    assert macro_f1(relabel(preds), relabel(truth), k).macro_f1 == pytest.approx(base, abs=1e-12)


def test_sweep_from_predictions():
    known_preds = np.array([0, 1, 1])
    known_truth = np.array([0, 1, 0])
    curve = sweep_from_predictions(known_preds, known_truth, [np.array([U]), np.array([U, 0])], [1, 2], 2)
    assert [p.n_unknown_classes for p in curve] == [1, 2]
    assert curve[0].openness == pytest.approx(openness(2, 3))
    assert curve[1].n_unknown == 2
    assert curve[0].macro_f1 == pytest.approx(macro_f1([0, 1, 1, U], [0, 1, 0, U], 2).macro_f1)


def test_sweep_duplicates_and_empty(tiny_model):
    x = torch.rand(4, 1, 32, 32)
    y = torch.tensor([0, 1, 2, 0])
    assert sweep_openness(tiny_model, x, y, [], 0.5) == []
    pool = UnknownPool((7,), torch.rand(3, 1, 32, 32))
    curve = sweep_openness(tiny_model, x, y, [pool, pool], 0.5)
    assert len(curve) == 2 and curve[0] == curve[1]


def test_sweep_overlap_rejected(tiny_model):
    pool = UnknownPool((3, 4), torch.rand(2, 1, 32, 32))
    with pytest.raises(ConfigError):
        sweep_openness(tiny_model, torch.rand(2, 1, 32, 32), torch.tensor([0, 1]), [pool], 0.5, known_class_ids=[1, 3])


def test_default_pool_openness_range():
    sizes = (10, 14, 19, 25, 32, 42, 54, 71, 100)
    values = [openness(10, 10 + n) for n in sizes]
    assert values[0] == pytest.approx(0.1835, abs=1e-4)
    assert values[-1] == pytest.approx(0.5918, abs=1e-4)
    assert values == sorted(values)


def test_curve_csv(tmp_path):
    curve = sweep_from_predictions(np.array([0]), np.array([0]), [np.array([U])], [1], 2)
    path = tmp_path / "c.csv"
    write_curve_csv(curve, path, baseline_id="VII-full", seed=0)
    header, row = path.read_text().splitlines()
    assert header.startswith("baseline_id,seed,n_unknown_classes,openness,macro_f1")
    assert row.startswith("VII-full,0,1,")
