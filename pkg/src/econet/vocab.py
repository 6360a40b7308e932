"""Word-level vocabulary for the mini-LM."""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .lexicon import TemporalLexicon

PAD, UNK, MASK, CLS, SEP = "<pad>", "<unk>", "<mask>", "<cls>", "<sep>"
SPECIALS = (PAD, UNK, MASK, CLS, SEP)


class Vocabulary:
    """Lowercased word vocabulary.

    Specials come first, then every lexicon indicator as a single token (so a
    masked slot can be filled with a multi-word indicator without shifting
    positions), then corpus words by descending frequency.
    """

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], lexicon: TemporalLexicon | None = None,
              extra: Iterable[str] = (), min_count: int = 1) -> "Vocabulary":
        counts: Counter = Counter()
        for sent in sentences:
            counts.update(t.lower() for t in sent if t not in SPECIALS)
        tokens = list(SPECIALS)
        seen = set(tokens)
        for t in list(lexicon.indicators if lexicon else ()) + [e.lower() for e in extra]:
            if t not in seen:
                tokens.append(t)
                seen.add(t)
        for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if c >= min_count and t not in seen:
                tokens.append(t)
                seen.add(t)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok.lower() in self._ids or tok in self._ids

    def id(self, tok: str) -> int:
        if tok in SPECIALS:
            return self._ids[tok]
        return self._ids.get(tok.lower(), self._ids[UNK])

    def encode(self, tokens: Sequence[str], add_cls: bool = True) -> list[int]:
        ids = [self.id(t) for t in tokens]
        return [self._ids[CLS]] + ids if add_cls else ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self._ids[t] for t in SPECIALS)

    def to_json(self) -> list[str]:
        return list(self.tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.tokens, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))
