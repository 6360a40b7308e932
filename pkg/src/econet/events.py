"""Event trigger tagging.

The default tagger is a lexicon of event verbs (base forms) and eventive
nouns. Inflected verb forms are mapped back to base forms by suffix
stripping plus a small table of irregular forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .lexicon import TemporalLexicon, find_indicators, indicator_positions, load_default

IRREGULAR = {
    "ate": "eat", "eaten": "eat", "became": "become", "began": "begin", "begun": "begin",
    "bit": "bite", "blew": "blow", "blown": "blow", "broke": "break", "broken": "break",
    "brought": "bring", "built": "build", "bought": "buy", "caught": "catch",
    "chose": "choose", "chosen": "choose", "came": "come", "dealt": "deal", "died": "die",
    "dying": "die", "drove": "drive", "driven": "drive", "fell": "fall", "fallen": "fall",
    "fought": "fight", "found": "find", "fled": "flee", "flew": "fly", "flown": "fly",
    "gave": "give", "given": "give", "went": "go", "gone": "go", "grew": "grow",
    "grown": "grow", "hung": "hang", "held": "hold", "led": "lead", "left": "leave",
    "lost": "lose", "made": "make", "met": "meet", "paid": "pay", "pled": "plead",
    "rode": "ride", "ridden": "ride", "rose": "rise", "risen": "rise", "ran": "run",
    "said": "say", "saw": "see", "seen": "see", "sold": "sell", "sent": "send",
    "shot": "shoot", "sang": "sing", "sung": "sing", "sank": "sink", "sunk": "sink",
    "sat": "sit", "slept": "sleep", "spoke": "speak", "spoken": "speak", "spent": "spend",
    "stood": "stand", "stole": "steal", "stolen": "steal", "struck": "strike",
    "took": "take", "taken": "take", "taught": "teach", "told": "tell", "threw": "throw",
    "thrown": "throw", "underwent": "undergo", "undergone": "undergo", "won": "win",
    "withdrew": "withdraw", "withdrawn": "withdraw", "wrote": "write", "written": "write",
    "lay": "lie", "woke": "wake", "wore": "wear", "read": "read", "cut": "cut", "hit": "hit",
    "put": "put", "set": "set", "shut": "shut", "split": "split", "spread": "spread",
    "quit": "quit", "cost": "cost", "bid": "bid", "beat": "beat", "hurt": "hurt",
}

_VOWELS = set("aeiou")


@dataclass(frozen=True)
class TriggerSpan:
    position: int
    surface: str


class Tagger(Protocol):
    def tag_triggers(self, tokens: Sequence[str]) -> list[TriggerSpan]: ...


def _read_words(source) -> list[str]:
    words = []
    for line in source:
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.append(line)
    return words


def _packaged(name: str) -> list[str]:
    with resources.files("econet").joinpath("data").joinpath(name).open(encoding="utf-8") as fh:
        return _read_words(fh)


def load_word_list(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return _read_words(fh)


def base_candidates(word: str) -> list[str]:
    """Possible base forms of an inflected verb, most literal first."""
    w = word.lower()
    out = [w]
    if w in IRREGULAR:
        out.append(IRREGULAR[w])
    if len(w) > 3 and w.endswith("ies"):
        out.append(w[:-3] + "y")
    if len(w) > 3 and w.endswith("es"):
        out.append(w[:-2])
    if len(w) > 2 and w.endswith("s") and not w.endswith("ss"):
        out.append(w[:-1])
    for suffix in ("ed", "ing"):
        if len(w) > len(suffix) + 1 and w.endswith(suffix):
            stem = w[:-len(suffix)]
            out.append(stem)
            out.append(stem + "e")
            if suffix == "ed" and stem.endswith("i"):
                out.append(stem[:-1] + "y")
            if len(stem) > 2 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS:
                out.append(stem[:-1])
    if len(w) > 2 and w.endswith("d") and w[-2] == "e":
        out.append(w[:-1])
    seen = set()
    return [c for c in out if not (c in seen or seen.add(c))]


class LexiconTagger:
    """Deterministic rule/lexicon trigger tagger.

    Tokens covered by a temporal indicator match are never triggers.
    """

    def __init__(self, verbs: Iterable[str] | None = None, nouns: Iterable[str] | None = None,
                 lexicon: TemporalLexicon | None = None):
        self.verbs = frozenset(w.lower() for w in (verbs if verbs is not None
                                                    else _packaged("event_verbs.txt")))
        self.nouns = frozenset(w.lower() for w in (nouns if nouns is not None
                                                    else _packaged("event_nouns.txt")))
        self.lexicon = lexicon if lexicon is not None else load_default()

    @classmethod
    def from_file(cls, path: str | Path, lexicon: TemporalLexicon | None = None,
                  include_default_nouns: bool = True) -> "LexiconTagger":
        nouns = None if include_default_nouns else ()
        return cls(verbs=load_word_list(path), nouns=nouns, lexicon=lexicon)

    def is_event_word(self, word: str) -> bool:
        w = word.lower()
        if not w[:1].isalpha():
            return False
        if w in self.nouns:
            return True
        return any(c in self.verbs for c in base_candidates(w))

    def tag_triggers(self, tokens: Sequence[str]) -> list[TriggerSpan]:
        blocked = indicator_positions(find_indicators(tokens, self.lexicon))
        return [TriggerSpan(i, tok) for i, tok in enumerate(tokens)
                if i not in blocked and self.is_event_word(tok)]


def tag_triggers(tokens: Sequence[str], tagger: Tagger | None = None) -> list[TriggerSpan]:
    return (tagger or default_tagger()).tag_triggers(tokens)


_DEFAULT: LexiconTagger | None = None


def default_tagger() -> LexiconTagger:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = LexiconTagger()
    return _DEFAULT
