"""Rule-based tokenization and sentence segmentation."""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:[-'.][A-Za-z0-9]+)*|'s\b|[^\sA-Za-z0-9]")

# abbreviations whose trailing period does not end a sentence
_ABBREVIATIONS = frozenset(
    "mr mrs ms dr prof sr jr st mt gen col lt sgt gov sen rep rev inc corp co ltd "
    "jan feb mar apr jun jul aug sep sept oct nov dec vs etc no".split())

_TERMINALS = frozenset(".!?")
_CLOSERS = frozenset("\"')]")
_OPENERS = frozenset("\"'([")


def _closes(current: list[str], tok: str) -> bool:
    # a straight quote closes only when the sentence has an unmatched one
    if tok in "\"'":
        return current.count(tok) % 2 == 1
    return True


def tokenize(text: str) -> list[str]:
    """Split text into word tokens with punctuation split off.

    >>> tokenize("Sotheby's has had to transfer the painting, following it.")
    ["Sotheby's", 'has', 'had', 'to', 'transfer', 'the', 'painting', ',', 'following', 'it', '.']
    """
    return _TOKEN_RE.findall(text)


def split_sentences(tokens: list[str]) -> list[list[str]]:
    """Segment a token stream at terminal punctuation.

    A terminal (``.``, ``!``, ``?``) ends a sentence when the next token is
    capitalized, a digit, or the end of input, and the previous word is not a
    known abbreviation. Closing brackets, and quotes that balance an open one,
    stay with the sentence.
    """
    sentences: list[list[str]] = []
    current: list[str] = []
    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        current.append(tok)
        if tok in _TERMINALS:
            prev = tokens[i - 1].lower() if i > 0 else ""
            if tok == "." and prev in _ABBREVIATIONS:
                i += 1
                continue
            j = i + 1
            while j < n and tokens[j] in _CLOSERS and _closes(current, tokens[j]):
                current.append(tokens[j])
                j += 1
            k = j
            while k < n - 1 and tokens[k] in _OPENERS:
                k += 1
            if j >= n or tokens[k][:1].isupper() or tokens[k][:1].isdigit():
                sentences.append(current)
                current = []
            i = j
            continue
        i += 1
    if current:
        sentences.append(current)
    return sentences


def segment(text: str) -> list[list[str]]:
    return split_sentences(tokenize(text))


def split_documents(text: str) -> list[str]:
    """Blank-line separated documents; surrounding whitespace dropped."""
    docs = [d.strip() for d in re.split(r"\n\s*\n", text)]
    return [d for d in docs if d]
