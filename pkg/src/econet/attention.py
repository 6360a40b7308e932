"""Event-to-indicator attention scores and per-category F1 deltas.

Scores read post-softmax attention with the event as query and the indicator
as key. Layers are 0-based in the function arguments and 1-based in emitted
reports.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .lexicon import TemporalLexicon, find_indicators
from .model import ForwardTrace, MiniLM
from .vocab import Vocabulary

MIN_HEATMAP_MATCHES = 50


class AnalysisError(ValueError):
    pass


def _check(trace: ForwardTrace, positions: Sequence[int], layer: int) -> None:
    n_layers, _, n, _ = trace.attention.shape
    if not 0 <= layer < n_layers:
        raise AnalysisError(f"layer {layer} out of range for {n_layers} layers")
    for p in positions:
        if not 0 <= p < n:
            raise AnalysisError(f"position {p} out of range for length {n}")


def event_indicator_attention(trace: ForwardTrace, event_pos: int, span: tuple[int, int],
                              layer: int) -> float:
    """Head-averaged attention from ``event_pos`` to the indicator ``span``
    (half-open), averaged over the span's tokens."""
    start, end = span
    if end <= start:
        raise AnalysisError("empty indicator span")
    _check(trace, [event_pos, start, end - 1], layer)
    head_mean = trace.attention[layer, :, event_pos, :].mean(axis=0)
    return float(head_mean[start:end].mean())


def pair_attention(trace: ForwardTrace, i: int, j: int, span: tuple[int, int],
                   layer: int) -> float:
    if i == j:
        raise AnalysisError("event positions must differ")
    return 0.5 * (event_indicator_attention(trace, i, span, layer)
                  + event_indicator_attention(trace, j, span, layer))


@dataclass(frozen=True)
class AttentionItem:
    """One event pair with its trace and indicator spans, all in trace positions."""
    trace: ForwardTrace
    i: int
    j: int
    indicators: tuple[tuple[str, tuple[int, int]], ...]  # (category, span)


def example_scores(item: AttentionItem) -> dict[str, np.ndarray]:
    """Per-layer pair scores averaged over the example's indicators of each category."""
    n_layers = item.trace.attention.shape[0]
    by_cat: dict[str, list[np.ndarray]] = {}
    for cat, span in item.indicators:
        row = np.array([pair_attention(item.trace, item.i, item.j, span, l)
                        for l in range(n_layers)])
        by_cat.setdefault(cat, []).append(row)
    return {c: np.mean(rows, axis=0) for c, rows in by_cat.items()}


@dataclass
class AttentionReport:
    """Per-category layer means (x100), running sums over layers, and counts."""
    categories: list[str]
    means: dict[str, np.ndarray]
    counts: dict[str, int]
    n_layers: int
    cumulative: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.cumulative = {c: np.cumsum(self.means[c]) for c in self.means}

    def rows(self) -> list[dict]:
        out = []
        for c in self.categories:
            if self.counts.get(c, 0) == 0:
                continue
            for l in range(self.n_layers):
                out.append({"category": c, "layer": l + 1, "mean": float(self.means[c][l]),
                            "cumulative": float(self.cumulative[c][l]),
                            "count": self.counts[c]})
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["category", "layer", "mean", "cumulative",
                                               "count"], lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({**r, "mean": repr(r["mean"]), "cumulative": repr(r["cumulative"])})


def report_from_items(items: Sequence[AttentionItem], categories: Sequence[str],
                      n_layers: int) -> AttentionReport:
    sums = {c: np.zeros(n_layers) for c in categories}
    counts = {c: 0 for c in categories}
    for item in items:
        for c, row in example_scores(item).items():
            if c not in sums:
                raise AnalysisError(f"unknown category {c!r}")
            sums[c] += row
            counts[c] += 1
    means = {c: 100.0 * sums[c] / counts[c] for c in categories if counts[c]}
    return AttentionReport(list(categories), means, counts, n_layers)


def average_reports(reports: Sequence[AttentionReport]) -> AttentionReport:
    """Average the final per-layer scores of several checkpoints."""
    if not reports:
        raise AnalysisError("no reports to average")
    first = reports[0]
    for r in reports[1:]:
        if r.counts != first.counts or r.n_layers != first.n_layers:
            raise AnalysisError("reports cover different examples or depths")
    means = {c: np.mean([r.means[c] for r in reports], axis=0) for c in first.means}
    return AttentionReport(list(first.categories), means, dict(first.counts), first.n_layers)


def attention_items(model: MiniLM, examples: Sequence, lexicon: TemporalLexicon,
                    vocab: Vocabulary) -> list[AttentionItem]:
    """Traces for event-pair examples (``tokens``, ``i``, ``j``); the ``<cls>``
    offset is applied here."""
    items = []
    for ex in examples:
        matches = find_indicators(ex.tokens, lexicon)
        if not matches:
            continue
        trace = model.forward(vocab.encode(ex.tokens))
        spans = tuple((m.category, (m.start + 1, m.end + 1)) for m in matches)
        items.append(AttentionItem(trace, ex.i + 1, ex.j + 1, spans))
    return items


def category_report(examples: Sequence, lexicon: TemporalLexicon,
                    models: MiniLM | Sequence[MiniLM], vocab: Vocabulary) -> AttentionReport:
    models = [models] if isinstance(models, MiniLM) else list(models)
    reports = []
    for model in models:
        items = attention_items(model, examples, lexicon, vocab)
        reports.append(report_from_items(items, lexicon.category_names,
                                         model.config.n_layers))
    return average_reports(reports)


# -- category x label F1 deltas ------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    example_id: str
    tokens: tuple[str, ...]
    gold: int
    prediction: int


@dataclass
class Heatmap:
    categories: list[str]
    labels: list[str]
    matrix: np.ndarray          # rows follow categories, columns labels
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {"categories": self.categories, "labels": self.labels,
                "matrix": self.matrix.tolist(), "counts": self.counts}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def heatmap_deltas(results_a: Sequence[EvalResult], results_b: Sequence[EvalResult],
                   lexicon: TemporalLexicon, labels: Sequence[str],
                   min_count: int = MIN_HEATMAP_MATCHES) -> Heatmap:
    """Per-class F1 of ``b`` minus ``a`` on the examples mentioning each category.

    Categories matched by fewer than ``min_count`` examples are left out.
    """
    ids_a = [r.example_id for r in results_a]
    ids_b = [r.example_id for r in results_b]
    if sorted(ids_a) != sorted(ids_b) or len(set(ids_a)) != len(ids_a):
        raise AnalysisError("result sets must cover the same examples")
    by_id_b = {r.example_id: r for r in results_b}
    members: dict[str, list[tuple[EvalResult, EvalResult]]] = {c: [] for c in
                                                               lexicon.category_names}
    for ra in results_a:
        rb = by_id_b[ra.example_id]
        if ra.gold != rb.gold:
            raise AnalysisError(f"gold labels disagree for {ra.example_id}")
        for c in sorted({m.category for m in find_indicators(ra.tokens, lexicon)}):
            members[c].append((ra, rb))
    kept = [c for c in lexicon.category_names if len(members[c]) >= min_count]
    matrix = np.zeros((len(kept), len(labels)))
    for row, c in enumerate(kept):
        gold = [a.gold for a, _ in members[c]]
        pa = [a.prediction for a, _ in members[c]]
        pb = [b.prediction for _, b in members[c]]
        for col in range(len(labels)):
            matrix[row, col] = (metrics.per_class_f1(gold, pb, col)
                                - metrics.per_class_f1(gold, pa, col))
    return Heatmap(kept, list(labels), matrix, {c: len(members[c]) for c in kept})
