"""Synthetic indicator-grammar corpora and toy downstream tasks.

Events carry a fixed rank in a daily routine. In "A <e_p> <ind> B <e_q> ."
the indicator category agrees with the ranks: [before] pairs e_p with a later
event, [after] with an earlier one, [during] with the same event. Other
categories pair two distinct events at random. A masked indicator's category
is therefore recoverable from the two events, and a masked event is narrowed
down by its partner plus the category, which is the knowledge the relation
tasks need.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .lexicon import TemporalLexicon, load_default

AGENTS = (("the", "chef"), ("the", "guard"), ("a", "farmer"), ("the", "pilot"),
          ("my", "aunt"), ("the", "doctor"), ("a", "student"), ("the", "mayor"),
          ("the", "baker"), ("a", "nurse"), ("the", "captain"), ("our", "neighbor"))
EVENTS = ("cooked", "ate", "washed", "walked", "visited", "bought", "sold", "returned",
          "wrote", "slept", "called", "traveled", "sang", "danced", "studied", "read")
FILLERS = (("the", "weather", "was", "mild", "."), ("nobody", "was", "surprised", "."),
           ("it", "was", "a", "quiet", "day", "."), ("the", "town", "is", "small", "."))

RELATION_OF_CATEGORY = {"before": "BEFORE", "after": "AFTER", "during": "EQUAL"}
INVERSE = {"BEFORE": "AFTER", "AFTER": "BEFORE", "EQUAL": "EQUAL", "VAGUE": "VAGUE"}
ERE_LABELS = ("BEFORE", "AFTER", "EQUAL", "VAGUE")


@dataclass(frozen=True)
class Clause:
    tokens: tuple[str, ...]
    indicator: str
    category: str
    first_event: int      # token position of e_p
    second_event: int     # token position of e_q
    relation: str         # relation of e_p to e_q


def draw_first(category: str, rng: random.Random, n_events: int = len(EVENTS)) -> int:
    """Rank of e_p; [before] needs a later event to exist, [after] an earlier one."""
    if category == "before":
        return rng.randrange(n_events - 1)
    if category == "after":
        return rng.randrange(1, n_events)
    return rng.randrange(n_events)


def partner(p: int, category: str, rng: random.Random, n_events: int = len(EVENTS)) -> int:
    if category == "before":
        return rng.randrange(p + 1, n_events)
    if category == "after":
        return rng.randrange(p)
    if category == "during":
        return p
    return rng.choice([q for q in range(n_events) if q != p])


def pick_indicator(rng: random.Random, lex: TemporalLexicon, relational_rate: float | None
                   ) -> str:
    """Uniform over the lexicon, or with the relational categories drawn at
    ``relational_rate``."""
    if relational_rate is None:
        return rng.choice(lex.indicators)
    rel = [e for e in lex.indicators if lex.category_of(e) in RELATION_OF_CATEGORY]
    other = [e for e in lex.indicators if lex.category_of(e) not in RELATION_OF_CATEGORY]
    return rng.choice(rel if rng.random() < relational_rate else other)


def make_clause(rng: random.Random, lex: TemporalLexicon, indicator: str | None = None,
                event: int | None = None, n_events: int = len(EVENTS),
                relational_rate: float | None = None) -> Clause:
    ind = indicator if indicator is not None else pick_indicator(rng, lex, relational_rate)
    cat = lex.category_of(ind)
    p = event if event is not None else draw_first(cat, rng, n_events)
    q = partner(p, cat, rng, n_events)
    a1, a2 = rng.sample(AGENTS, 2)
    ind_toks = tuple(ind.split())
    if cat in RELATION_OF_CATEGORY:
        toks = a1 + (EVENTS[p],) + ind_toks + a2 + (EVENTS[q], ".")
        first, second = 2, 2 + len(ind_toks) + 3
    else:
        toks = ind_toks + (",",) + a1 + (EVENTS[p], "and") + a2 + (EVENTS[q], ".")
        first = len(ind_toks) + 3
        second = first + 4
    return Clause(toks, ind, cat, first, second, RELATION_OF_CATEGORY.get(cat, "VAGUE"))


def make_documents(n_docs: int, seed: int = 0, sentences_per_doc: int = 6,
                   filler_rate: float = 0.2, lex: TemporalLexicon | None = None,
                   n_events: int = len(EVENTS), relational_rate: float | None = None
                   ) -> list[tuple[str, str]]:
    """``(doc_id, text)`` pairs of planted-indicator sentences and fillers."""
    lex = lex or load_default()
    rng = random.Random(seed)
    docs = []
    for d in range(n_docs):
        sents = []
        for _ in range(sentences_per_doc):
            if rng.random() < filler_rate:
                toks = rng.choice(FILLERS)
            else:
                toks = make_clause(rng, lex, n_events=n_events,
                                   relational_rate=relational_rate).tokens
            words = list(toks)
            words[0] = words[0].capitalize()
            sents.append(" ".join(words))
        docs.append((f"doc{d:05d}", " ".join(sents)))
    return docs


def make_ere_examples(n: int, seed: int = 0, lex: TemporalLexicon | None = None,
                      indicators: tuple[str, ...] | None = None, n_events: int = len(EVENTS),
                      relational_rate: float | None = None) -> list[dict]:
    """ERE records ``{id, tokens, i, j, relation}`` with a randomly chosen direction."""
    lex = lex or load_default()
    rng = random.Random(seed)
    out = []
    for k in range(n):
        ind = rng.choice(indicators) if indicators else None
        c = make_clause(rng, lex, indicator=ind, n_events=n_events,
                        relational_rate=relational_rate)
        i, j, rel = c.first_event, c.second_event, c.relation
        if rng.random() < 0.5:
            i, j, rel = j, i, INVERSE[rel]
        out.append({"id": f"ere{seed}-{k}", "tokens": list(c.tokens), "i": i, "j": j,
                    "relation": rel})
    return out


def make_extractive_qa(n: int, seed: int = 0, lex: TemporalLexicon | None = None) -> list[dict]:
    """Question "what happened <rel> <event> ?" over a one-clause passage.

    The answer is the partner event when the clause states that relation,
    otherwise nothing.
    """
    lex = lex or load_default()
    rng = random.Random(seed)
    out = []
    for k in range(n):
        c = make_clause(rng, lex)
        labels = [0] * len(c.tokens)
        asked = rng.choice(("before", "after"))
        # "what happened before X": answer Y if Y is before X, i.e. rel(X, Y) == AFTER
        want = "AFTER" if asked == "before" else "BEFORE"
        if c.relation == want:
            labels[c.second_event] = 1
        question = ["what", "happened", asked, c.tokens[c.first_event], "?"]
        out.append({"id": f"qa{seed}-{k}", "passage": list(c.tokens), "question": question,
                    "answer_labels": labels, "group": f"g{seed}-{k // 2}"})
    return out


def make_binary_qa(n: int, seed: int = 0, lex: TemporalLexicon | None = None) -> list[dict]:
    """Candidate-answer records; label 1 iff the candidate event is the partner."""
    lex = lex or load_default()
    rng = random.Random(seed)
    out = []
    for k in range(n):
        c = make_clause(rng, lex, indicator=rng.choice(lex.members(rng.choice(("before",
                                                                                 "after")))))
        asked = "before" if c.relation == "AFTER" else "after"
        true_event = c.tokens[c.second_event]
        cand = true_event if rng.random() < 0.5 else rng.choice(
            [e for e in EVENTS if e not in (true_event, c.tokens[c.first_event])])
        out.append({"id": f"bqa{seed}-{k}", "question_id": f"q{seed}-{k}",
                    "passage": list(c.tokens),
                    "question": ["what", "happened", asked, c.tokens[c.first_event], "?"],
                    "answer": [cand], "label": int(cand == true_event)})
    return out


def make_random_sentences(n: int, seed: int = 0, lex: TemporalLexicon | None = None,
                          max_len: int = 14) -> list[list[str]]:
    """Word salad with indicators (including multi-word ones) and their pieces
    planted at random, for matcher property checks."""
    lex = lex or load_default()
    rng = random.Random(seed)
    pieces = sorted({w for e in lex.indicators for w in e.split()})
    words = ["cat", "ran", "home", "storm", "Soon", "AFTER", "The", "x"] + pieces
    out = []
    for _ in range(n):
        toks: list[str] = []
        while len(toks) < rng.randint(0, max_len):
            r = rng.random()
            if r < 0.25:
                toks.extend(w.upper() if rng.random() < 0.2 else w
                            for w in rng.choice(lex.indicators).split())
            else:
                toks.append(rng.choice(words))
        out.append(toks)
    return out
