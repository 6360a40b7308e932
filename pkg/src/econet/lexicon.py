"""Temporal indicator lexicon and word-level indicator matching."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_CATEGORIES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("before", ("before", "until", "previous to", "prior to", "preceding", "followed by")),
    ("after", ("after", "following", "since", "now that", "soon after", "once")),
    ("during", ("during", "while", "when", "at the time", "at the same time", "meanwhile")),
    ("past", ("earlier", "previously", "formerly", "yesterday", "in the past", "last time")),
    ("future", ("consequently", "subsequently", "in turn", "henceforth", "later", "then")),
    ("beginning", ("initially", "originally", "at the beginning", "to begin", "starting with",
                   "to start with")),
    ("ending", ("finally", "in the end", "at last", "lastly")),
)


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class IndicatorMatch:
    start: int
    end: int
    surface: str
    category: str
    lexicon_id: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


def _normalize(entry: str) -> str:
    return " ".join(entry.lower().split())


class TemporalLexicon:
    """Ordered categories of temporal indicators.

    Indicator ids are dense and follow category order, then the order of
    entries within a category.
    """

    def __init__(self, categories: Sequence[tuple[str, Sequence[str]]]):
        cats: list[tuple[str, tuple[str, ...]]] = []
        seen: dict[str, str] = {}
        for name, entries in categories:
            normed = []
            for raw in entries:
                entry = _normalize(raw)
                if not entry:
                    raise LexiconError(f"empty indicator in category {name!r}")
                if entry in seen:
                    raise LexiconError(
                        f"indicator {entry!r} appears in both {seen[entry]!r} and {name!r}")
                seen[entry] = name
                normed.append(entry)
            cats.append((name, tuple(normed)))
        self.categories: tuple[tuple[str, tuple[str, ...]], ...] = tuple(cats)
        self.indicators: tuple[str, ...] = tuple(e for _, es in cats for e in es)
        self.indicator_category: tuple[str, ...] = tuple(n for n, es in cats for _ in es)
        self._id = {e: i for i, e in enumerate(self.indicators)}
        # first word -> candidate (word tuple, id), longest first
        self._by_head: dict[str, list[tuple[tuple[str, ...], int]]] = {}
        for i, e in enumerate(self.indicators):
            words = tuple(e.split())
            self._by_head.setdefault(words[0], []).append((words, i))
        for cands in self._by_head.values():
            cands.sort(key=lambda c: -len(c[0]))
        self.max_words = max((len(e.split()) for e in self.indicators), default=0)

    def __len__(self) -> int:
        return len(self.indicators)

    def __contains__(self, entry: str) -> bool:
        return _normalize(entry) in self._id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TemporalLexicon) and self.categories == other.categories

    def __hash__(self) -> int:
        return hash(self.categories)

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.categories)

    def id_of(self, entry: str) -> int:
        try:
            return self._id[_normalize(entry)]
        except KeyError:
            raise LexiconError(f"{entry!r} is not in the lexicon") from None

    def category_of(self, entry: str) -> str:
        return self.indicator_category[self.id_of(entry)]

    def members(self, category: str) -> tuple[str, ...]:
        for name, entries in self.categories:
            if name == category:
                return entries
        raise LexiconError(f"unknown category {category!r}")

    def candidates(self, head: str) -> list[tuple[tuple[str, ...], int]]:
        return self._by_head.get(head, [])

    def to_lines(self) -> list[str]:
        return [f"{n}\t{e}" for n, es in self.categories for e in es]


def load_default() -> TemporalLexicon:
    return TemporalLexicon(DEFAULT_CATEGORIES)


def load_file(path: str | Path) -> TemporalLexicon:
    """Read ``category<TAB>indicator`` lines; ``#`` lines and blanks are skipped.

    Category order follows first appearance in the file. Category names may
    be written with or without square brackets.
    """
    order: list[str] = []
    entries: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise LexiconError(f"{path}:{lineno}: expected 'category<TAB>indicator'")
            cat, ind = line.split("\t", 1)
            cat = cat.strip().strip("[]")
            if cat not in entries:
                order.append(cat)
                entries[cat] = []
            entries[cat].append(ind)
    return TemporalLexicon([(c, entries[c]) for c in order])


def find_indicators(tokens: Sequence[str], lex: TemporalLexicon) -> list[IndicatorMatch]:
    """Non-overlapping, case-insensitive matches in left-to-right order.

    Overlaps are resolved in favour of the longer indicator, then the earlier
    one, so a long entry is never displaced by a shorter one it intersects.
    """
    lowered = [t.lower() for t in tokens]
    found: list[IndicatorMatch] = []
    for pos, word in enumerate(lowered):
        for words, idx in lex.candidates(word):
            k = len(words)
            if tuple(lowered[pos:pos + k]) == words:
                found.append(IndicatorMatch(pos, pos + k, " ".join(tokens[pos:pos + k]),
                                            lex.indicator_category[idx], idx))
    if not found:
        return []
    found.sort(key=lambda m: (m.start - m.end, m.start))
    taken = [False] * len(lowered)
    kept = []
    for m in found:
        if not any(taken[m.start:m.end]):
            kept.append(m)
            for p in range(m.start, m.end):
                taken[p] = True
    kept.sort(key=lambda m: m.start)
    return kept


def indicator_positions(matches: Iterable[IndicatorMatch]) -> set[int]:
    return {p for m in matches for p in range(m.start, m.end)}
