"""Vocabulary, source/target encoding and annotation rendering."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..textproc import tokenize

PAD, SOS, EOS, UNK, SLASH, ANNSEP = range(6)
SPECIALS = ("<pad>", "<s>", ".", "<unk>", "/", "<sep>")


class Vocab:
    """Token <-> id bijection with fixed special ids (see ``SPECIALS``)."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = list(SPECIALS)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, UNK)

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_freq: int = 1) -> "Vocab":
        counts = Counter(t for seq in sequences for t in seq)
        kept = sorted((t for t, n in counts.items() if n >= min_freq and t not in SPECIALS),
                      key=lambda t: (-counts[t], t))
        return cls(kept)


def annotation_tokens(ann) -> List[str]:
    """heading / sub1 / sub2 ... as target tokens (multiword terms split into words)."""
    out: List[str] = []
    for j, term in enumerate(ann.terms):
        if j:
            out.append(SPECIALS[SLASH])
        out.extend(tokenize(term))
    return out


def build_targets(annotations: Sequence) -> List[str]:
    """Target token sequence for one sentence (or one paragraph).

    >>> from radannot.corpus import parse_annotation
    >>> build_targets([parse_annotation("Cardiomegaly/severe")])
    ['cardiomegaly', '/', 'severe', '.']
    """
    out: List[str] = []
    for j, ann in enumerate(annotations):
        if j:
            out.append(SPECIALS[ANNSEP])
        out.extend(annotation_tokens(ann))
    out.append(SPECIALS[EOS])
    return out


def normalize_annotation(raw: str) -> str:
    """The form a decoded annotation takes: lowercase terms, punctuation dropped.

    >>> normalize_annotation("Hernia, Hiatal/Left")
    'hernia hiatal/left'
    """
    return "/".join(" ".join(tokenize(t)) for t in raw.split("/") if tokenize(t))


def render_annotations(tokens: Sequence[str]) -> List[str]:
    """Split decoded tokens on the separator and join terms with "/"."""
    anns, terms, words = [], [], []

    def close_term():
        if words:
            terms.append(" ".join(words))
            words.clear()

    def close_ann():
        close_term()
        if terms:
            anns.append("/".join(terms))
            terms.clear()

    for t in tokens:
        if t == SPECIALS[EOS]:
            break
        if t == SPECIALS[ANNSEP]:
            close_ann()
        elif t == SPECIALS[SLASH]:
            close_term()
        elif t not in SPECIALS:
            words.append(t)
    close_ann()
    return anns


@dataclass
class Example:
    source: Tuple[str, ...]
    target: Tuple[str, ...]
    src_ids: np.ndarray  # base vocabulary, OOV -> UNK
    src_ext: np.ndarray  # extended vocabulary ids
    oovs: Tuple[str, ...]
    tgt_ext: np.ndarray  # extended ids, EOS-terminated


def encode_example(vocab: Vocab, source: Sequence[str], target: Sequence[str] = (".",)) -> Example:
    V = len(vocab)
    oovs: List[str] = []
    src_ext = []
    for t in source:
        i = vocab.id(t)
        if i == UNK and t not in vocab:
            if t not in oovs:
                oovs.append(t)
            i = V + oovs.index(t)
        src_ext.append(i)
    tgt = []
    for t in target:
        if t in vocab:
            tgt.append(vocab.stoi[t])
        elif t in oovs:
            tgt.append(V + oovs.index(t))
        else:
            tgt.append(UNK)
    src_ids = np.array([vocab.id(t) for t in source], dtype=np.int64)
    return Example(tuple(source), tuple(target), src_ids, np.array(src_ext, dtype=np.int64),
                   tuple(oovs), np.array(tgt, dtype=np.int64))


def decode_ids(vocab: Vocab, ids: Sequence[int], oovs: Sequence[str]) -> List[str]:
    V = len(vocab)
    return [vocab.itos[i] if i < V else oovs[i - V] for i in ids]
