import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from econet.metrics import (confusion_matrix, consistency, exact_match, macro_f1_questions,
                            mcnemar, mean_std, micro_f1, per_class_f1, set_f1)

from oracles import chi2_1_sf, f1_counts

LABELS = ["BEFORE", "AFTER", "VAGUE"]


def test_set_f1_conventions():
    assert set_f1([], []) == 1.0
    assert set_f1(["a"], []) == 0.0 and set_f1([], ["a"]) == 0.0
    assert set_f1(["a"], ["b"]) == 0.0


def test_macro_f1_hand_example():
    assert macro_f1_questions([{"a"}], [{"a", "b"}]) == pytest.approx(2 / 3, abs=1e-15)
    assert macro_f1_questions([{"a"}, set()], [{"a"}, set()]) == 1.0


def test_macro_f1_length_mismatch():
    with pytest.raises(ValueError):
        macro_f1_questions([{"a"}], [])


def test_micro_f1_diagonal():
    assert micro_f1(np.diag([3, 4, 5]), LABELS) == 1.0


def test_micro_f1_hand_confusion():
    # positives BEFORE, AFTER; TP = 4, FP = 2, FN = 2
    cm = np.array([[2, 1, 1],
                   [0, 2, 0],
                   [1, 0, 5]])
    assert micro_f1(cm, LABELS) == pytest.approx(2 / 3, abs=1e-15)
    tp, fp, fn = 4, 2, 2
    assert micro_f1(cm, LABELS) == pytest.approx(f1_counts(tp, fp, fn), abs=1e-15)


def test_micro_f1_all_negative_predictions():
    cm = np.array([[0, 0, 4], [0, 0, 3], [0, 0, 2]])
    assert micro_f1(cm, LABELS) == 0.0


def test_confusion_rows_are_gold():
    cm = confusion_matrix([0, 0, 1], [1, 0, 1], 2)
    assert cm.tolist() == [[1, 1], [0, 1]]


def test_exact_match_against_set_equality():
    rng = random.Random(0)
    assert exact_match({1, 2}, [2, 1]) == 1 and exact_match({1, 2, 3}, {1, 2}) == 0
    for _ in range(1000):
        a = {rng.randrange(5) for _ in range(rng.randrange(4))}
        b = {rng.randrange(5) for _ in range(rng.randrange(4))}
        assert exact_match(a, b) == (1 if a == b else 0)


def test_consistency():
    assert consistency({"g1": [1, 1], "g2": [1]}) == 1.0
    assert consistency({"g1": [1, 0]}) == 0.0
    # hand-mixed: groups {1,1,1}, {1,0}, {0}, {1} -> 2 of 4
    assert consistency([[1, 1, 1], [1, 0], [0], [1]]) == 0.5


def test_mcnemar_fixture():
    a = [1] * 15 + [0] * 5 + [1] * 30 + [0] * 10
    b = [0] * 15 + [1] * 5 + [1] * 30 + [0] * 10
    stat, p = mcnemar(a, b)
    assert stat == pytest.approx(4.05, abs=1e-12)
    assert p == pytest.approx(chi2_1_sf(4.05), abs=1e-12)
    assert 0.043 < p < 0.045
    assert mcnemar(b, a) == (stat, p)


def test_mcnemar_identical_vectors():
    assert mcnemar([1, 0, 1], [1, 0, 1]) == (0.0, 1.0)
    with pytest.raises(ValueError):
        mcnemar([1], [1, 0])


def test_per_class_f1_and_mean_std():
    assert per_class_f1([0, 0, 1], [0, 1, 1], 0) == pytest.approx(2 / 3)
    assert per_class_f1([1], [1], 0) == 0.0
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)


answer_sets = st.sets(st.integers(0, 6), max_size=4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(answer_sets, answer_sets), min_size=1, max_size=8), answer_sets)
def test_metric_ranges_and_monotonicity(pairs, extra):
    preds = [p for p, _ in pairs]
    golds = [g for _, g in pairs]
    base = macro_f1_questions(preds, golds)
    assert 0.0 <= base <= 1.0
    # a correctly answered question never lowers the macro score
    assert macro_f1_questions(preds + [extra], golds + [extra]) >= base - 1e-15
    ems = [[exact_match(p, g)] for p, g in pairs]
    c = consistency(ems)
    assert 0.0 <= c <= 1.0 and consistency(ems + [[1]]) >= c


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=30))
def test_micro_f1_matches_counting_oracle(pairs):
    gold = [g for g, _ in pairs]
    pred = [p for _, p in pairs]
    pos = {0, 1}
    tp = sum(1 for g, p in pairs if g == p and g in pos)
    fp = sum(1 for g, p in pairs if p in pos and g != p)
    fn = sum(1 for g, p in pairs if g in pos and g != p)
    assert micro_f1(confusion_matrix(gold, pred, 3), LABELS) == pytest.approx(
        f1_counts(tp, fp, fn), abs=1e-12)
