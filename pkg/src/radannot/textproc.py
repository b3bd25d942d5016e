"""Tokenization and word n-grams shared by the matcher and the metrics."""

from __future__ import annotations

import re
from typing import List, Sequence

from .porter import stem as porter_stem

__all__ = ["tokenize", "porter_stem", "word_ngrams", "stem_tokens"]

_EDGE = re.compile(r"^[^a-z]+|[^a-z]+$")


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace and strip non-alphabetic edges.

    >>> tokenize("Low lung volumes.")
    ['low', 'lung', 'volumes']
    """
    out = []
    for piece in text.lower().split():
        piece = _EDGE.sub("", piece)
        if piece:
            out.append(piece)
    return out


def word_ngrams(tokens: Sequence[str], n: int) -> List[str]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def stem_tokens(tokens: Sequence[str]) -> List[str]:
    return [porter_stem(t) for t in tokens]
