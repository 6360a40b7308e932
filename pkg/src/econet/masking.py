"""Targeted mask creation: passages with temporal indicators -> masked samples."""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .events import Tagger, TriggerSpan, default_tagger
from .lexicon import IndicatorMatch, TemporalLexicon, find_indicators
from .text import segment, split_documents

MASK = "<mask>"
TEMPORAL = 1
EVENT = 0

FIELDS = ("tokens", "mask_pos", "gold", "kind", "gold_label_id", "source_id")


class SampleError(ValueError):
    pass


@dataclass(frozen=True)
class MaskedSample:
    tokens: tuple[str, ...]
    mask_pos: int
    gold: str
    kind: int
    gold_label_id: int
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.kind not in (TEMPORAL, EVENT):
            raise SampleError(f"kind must be 0 or 1, got {self.kind!r}")
        if not 0 <= self.mask_pos < len(self.tokens) or self.tokens[self.mask_pos] != MASK:
            raise SampleError(f"no mask symbol at mask_pos={self.mask_pos}")
        if self.tokens.count(MASK) != 1:
            raise SampleError("a sample must contain exactly one mask symbol")

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "mask_pos": self.mask_pos, "gold": self.gold,
                "kind": self.kind, "gold_label_id": self.gold_label_id,
                "source_id": self.source_id}

    def unmasked(self) -> list[str]:
        """Original token sequence, with multi-word golds expanded again."""
        return (list(self.tokens[:self.mask_pos]) + self.gold.split()
                + list(self.tokens[self.mask_pos + 1:]))


class EventVocabulary:
    """Dense ids for lowercased trigger surface forms."""

    def __init__(self, words: Iterable[str] = ()):
        self.words: list[str] = []
        self._ids: dict[str, int] = {}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        w = word.lower()
        if w not in self._ids:
            self._ids[w] = len(self.words)
            self.words.append(w)
        return self._ids[w]

    def id_of(self, word: str) -> int:
        try:
            return self._ids[word.lower()]
        except KeyError:
            raise SampleError(f"trigger {word!r} is not in the event vocabulary") from None

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._ids

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EventVocabulary) and self.words == other.words

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EventVocabulary":
        return cls(line.rstrip("\n") for line in open(path, encoding="utf-8") if line.strip())


@dataclass(frozen=True)
class Passage:
    tokens: tuple[str, ...]
    doc_id: str
    sentence_index: int
    n_sentences: int

    @property
    def source_id(self) -> str:
        return f"{self.doc_id}:{self.sentence_index}"

    @property
    def hash(self) -> str:
        return passage_hash(self.tokens)


def passage_hash(tokens: Sequence[str]) -> str:
    return hashlib.sha1(" ".join(t.lower() for t in tokens).encode("utf-8")).hexdigest()


def extract_passages(sentences: Sequence[Sequence[str]], lex: TemporalLexicon,
                     doc_id: str = "") -> list[Passage]:
    """Every sentence holding an indicator leads a passage; the next sentence,
    when there is one, is appended."""
    out = []
    for i, sent in enumerate(sentences):
        if not find_indicators(sent, lex):
            continue
        if i + 1 < len(sentences):
            toks = tuple(sent) + tuple(sentences[i + 1])
            out.append(Passage(toks, doc_id, i, 2))
        else:
            out.append(Passage(tuple(sent), doc_id, i, 1))
    return out


def build_temporal_sample(tokens: Sequence[str], matches: Sequence[IndicatorMatch],
                          source_id: str = "") -> MaskedSample:
    if not matches:
        raise SampleError("cannot build a temporal sample without indicator matches")
    m = matches[0]
    masked = list(tokens[:m.start]) + [MASK] + list(tokens[m.end:])
    return MaskedSample(tuple(masked), m.start, m.surface, TEMPORAL, m.lexicon_id, source_id)


def closest_trigger(triggers: Sequence[TriggerSpan], anchor: int) -> TriggerSpan:
    # min() keeps the first of equal keys, and triggers are position-sorted
    return min(triggers, key=lambda t: abs(t.position - anchor))


def build_event_sample(tokens: Sequence[str], matches: Sequence[IndicatorMatch],
                       triggers: Sequence[TriggerSpan], vocab: EventVocabulary,
                       source_id: str = "") -> MaskedSample:
    if not matches:
        raise SampleError("cannot build an event sample without indicator matches")
    if not triggers:
        raise SampleError("cannot build an event sample without triggers")
    trig = closest_trigger(sorted(triggers, key=lambda t: t.position), matches[0].start)
    masked = list(tokens)
    masked[trig.position] = MASK
    return MaskedSample(tuple(masked), trig.position, trig.surface, EVENT,
                        vocab.id_of(trig.surface), source_id)


def write_jsonl(samples: Iterable[MaskedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[MaskedSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(MaskedSample(tuple(rec["tokens"]), int(rec["mask_pos"]), rec["gold"],
                                        int(rec["kind"]), int(rec["gold_label_id"]),
                                        rec.get("source_id", "")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SampleError(f"{path}:{lineno}: malformed sample record ({exc})") from exc
    return out


@dataclass
class CorpusStats:
    documents: int = 0
    sentences: int = 0
    passages: int = 0
    temporal_samples: int = 0
    event_samples: int = 0
    category_matches: Counter = field(default_factory=Counter)
    skipped: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"documents": self.documents, "sentences": self.sentences,
                "passages": self.passages, "temporal_samples": self.temporal_samples,
                "event_samples": self.event_samples,
                "category_matches": dict(sorted(self.category_matches.items())),
                "skipped": dict(sorted(self.skipped.items()))}


def build_corpus(documents: Iterable[tuple[str, str]], lex: TemporalLexicon,
                 tagger: Tagger | None = None, budget: int | None = None,
                 exclude: Iterable[str] = (), seed: int = 0,
                 max_tokens: int | None = None,
                 ) -> tuple[list[MaskedSample], EventVocabulary, CorpusStats]:
    """Build temporal- and event-kind samples from ``(doc_id, text)`` pairs.

    With a budget of N, at most N // 2 samples of each kind are emitted; the
    passages that fill the quotas are picked by a seeded shuffle. Output is
    ordered by (document order, passage offset, kind).
    """
    tagger = tagger or default_tagger()
    excluded = set(exclude)
    stats = CorpusStats()
    vocab = EventVocabulary()
    pool = []  # (doc_rank, passage, matches, triggers)
    for rank, (doc_id, text) in enumerate(documents):
        stats.documents += 1
        sentences = segment(text)
        stats.sentences += len(sentences)
        for p in extract_passages(sentences, lex, doc_id):
            stats.passages += 1
            if p.hash in excluded:
                stats.skipped["excluded"] += 1
                continue
            if max_tokens is not None and len(p.tokens) > max_tokens:
                stats.skipped["too_long"] += 1
                continue
            matches = find_indicators(p.tokens, lex)
            triggers = tagger.tag_triggers(p.tokens)
            for m in matches:
                stats.category_matches[m.category] += 1
            for t in triggers:
                vocab.add(t.surface)
            pool.append((rank, p, matches, triggers))

    quota = None if budget is None else budget // 2
    order = list(range(len(pool)))
    if quota is not None:
        random.Random(seed).shuffle(order)
    chosen = []
    n_temporal = n_event = 0
    for idx in order:
        rank, p, matches, triggers = pool[idx]
        if quota is None or n_temporal < quota:
            chosen.append((rank, p.sentence_index, TEMPORAL,
                           build_temporal_sample(p.tokens, matches, p.source_id)))
            n_temporal += 1
        else:
            stats.skipped["temporal_budget"] += 1
        if not triggers:
            stats.skipped["no_trigger"] += 1
        elif quota is None or n_event < quota:
            chosen.append((rank, p.sentence_index, EVENT,
                           build_event_sample(p.tokens, matches, triggers, vocab, p.source_id)))
            n_event += 1
        else:
            stats.skipped["event_budget"] += 1
    chosen.sort(key=lambda c: (c[0], c[1], -c[2]))
    samples = [c[3] for c in chosen]
    stats.temporal_samples = n_temporal
    stats.event_samples = n_event
    return samples, vocab, stats


def read_documents(input_dir: str | Path) -> list[tuple[str, str]]:
    """Documents from every ``*.txt`` file under a directory, in sorted path order.

    A file holding blank-line separated blocks yields one document per block.
    """
    root = Path(input_dir)
    docs = []
    for path in sorted(root.rglob("*.txt")):
        rel = path.relative_to(root).as_posix()
        blocks = split_documents(path.read_text(encoding="utf-8"))
        for k, block in enumerate(blocks):
            docs.append((rel if len(blocks) == 1 else f"{rel}#{k}", block))
    return docs
