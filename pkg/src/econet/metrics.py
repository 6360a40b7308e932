"""Evaluation metrics and McNemar's significance test."""

from __future__ import annotations

from collections.abc import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import chi2

NEGATIVE_LABELS = ("VAGUE", "NONE")


def set_f1(pred: Iterable[Hashable], gold: Iterable[Hashable]) -> float:
    """F1 between two answer sets; 1.0 when both are empty, 0.0 when only one is."""
    p, g = set(pred), set(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    tp = len(p & g)
    if tp == 0:
        return 0.0
    prec, rec = tp / len(p), tp / len(g)
    return 2 * prec * rec / (prec + rec)


def macro_f1_questions(predictions: Sequence[Iterable[Hashable]],
                       golds: Sequence[Iterable[Hashable]]) -> float:
    """Mean over questions of the per-question answer-set F1."""
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    if not golds:
        return 0.0
    return float(np.mean([set_f1(p, g) for p, g in zip(predictions, golds)]))


def exact_match(pred: Iterable[Hashable], gold: Iterable[Hashable]) -> int:
    return int(set(pred) == set(gold))


def consistency(groups: Mapping[Hashable, Sequence[int]] | Sequence[Sequence[int]]) -> float:
    """Fraction of question groups in which every question has EM = 1."""
    values = list(groups.values()) if isinstance(groups, Mapping) else list(groups)
    if not values:
        return 0.0
    return float(np.mean([all(int(e) == 1 for e in g) for g in values]))


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], n_labels: int) -> np.ndarray:
    """Rows are gold labels, columns predictions."""
    m = np.zeros((n_labels, n_labels), dtype=np.int64)
    for g, p in zip(gold, pred):
        m[g, p] += 1
    return m


def micro_f1(confusion: np.ndarray, labels: Sequence[str] | None = None,
             negative: Iterable[str] = NEGATIVE_LABELS) -> float:
    """Micro-averaged F1 with negative classes excluded from the positives.

    Precision counts predictions of a positive class; recall counts gold
    instances of a positive class. A pair predicted or labelled as a negative
    class contributes only as a miss or a false alarm of the other side.
    """
    confusion = np.asarray(confusion)
    n = confusion.shape[0]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    neg = set(negative)
    pos = np.array([lab not in neg for lab in labels])
    tp = float(np.trace(confusion * np.outer(pos, pos)))
    pred_pos = float(confusion[:, pos].sum())
    gold_pos = float(confusion[pos, :].sum())
    if tp == 0.0:
        return 0.0
    p, r = tp / pred_pos, tp / gold_pos
    return 2 * p * r / (p + r)


def per_class_f1(gold: Sequence[int], pred: Sequence[int], label: int) -> float:
    tp = sum(1 for g, p in zip(gold, pred) if g == label and p == label)
    fp = sum(1 for g, p in zip(gold, pred) if g != label and p == label)
    fn = sum(1 for g, p in zip(gold, pred) if g == label and p != label)
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def mcnemar(correct_a: Sequence[int], correct_b: Sequence[int]) -> tuple[float, float]:
    """Continuity-corrected McNemar test on paired 0/1 correctness vectors.

    Returns ``(statistic, p_value)``; with no discordant pairs the statistic
    is 0 and p is 1.
    """
    a = np.asarray(correct_a, dtype=int)
    b = np.asarray(correct_b, dtype=int)
    if a.shape != b.shape:
        raise ValueError("correctness vectors must have equal length")
    n_ab = int(np.sum((a == 1) & (b == 0)))
    n_ba = int(np.sum((a == 0) & (b == 1)))
    if n_ab + n_ba == 0:
        return 0.0, 1.0
    stat = (abs(n_ab - n_ba) - 1) ** 2 / (n_ab + n_ba)
    return float(stat), float(chi2.sf(stat, 1))


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())
