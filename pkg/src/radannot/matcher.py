"""Rule-based sentence/annotation matching with a sentence-encoder fallback.

For every annotation of a report the matcher expands the heading into
candidate words, keeps the sentences containing the largest number of them
and then resolves the remaining ambiguity:

1. exactly one best sentence: take it;
2. several best sentences and a heading-only annotation: take the earliest;
3. several best sentences otherwise: rank them by subheading candidates;
4. no sentence contains any candidate: fall back to the sentence encoder,
   accepting its best sentence only above the calibrated threshold.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .embed import EmbeddingTable, SentenceEncoder, cosine, most_similar
from .errors import BadConfig, MalformedRecord, MissingGroundTruth
from .textproc import porter_stem, stem_tokens, tokenize, word_ngrams

PROVENANCES = ("manual", "rule", "encoder", "random-baseline")
SOURCES = ("ngram", "stem", "synonym", "neighbor")


def _norm(term: str) -> str:
    return " ".join(tokenize(term))


class SynonymDict:
    """Symmetric term <-> synonym lookup; keys are token-normalized."""

    def __init__(self, pairs: Iterable[Tuple[str, str]] = ()):
        self._map: Dict[str, Set[str]] = {}
        self.entries: Set[frozenset] = set()
        for a, b in pairs:
            self.add(a, b)

    def add(self, term: str, synonym: str) -> None:
        a, b = _norm(term), _norm(synonym)
        if not a or not b or a == b:
            return
        self._map.setdefault(a, set()).add(b)
        self._map.setdefault(b, set()).add(a)
        self.entries.add(frozenset((a, b)))

    def lookup(self, term: str) -> Set[str]:
        return set(self._map.get(_norm(term), ()))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, term: str) -> bool:
        return _norm(term) in self._map

    @classmethod
    def load(cls, path) -> "SynonymDict":
        d = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise MalformedRecord("expected 'term<TAB>synonym'", lineno)
                d.add(parts[0], parts[1])
        return d

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# term\tsynonym\n")
            for a, b in sorted(tuple(sorted(e)) for e in self.entries):
                fh.write(f"{a}\t{b}\n")


@dataclass
class CandidateWordSet:
    """Candidate strings (space-joined tokens) with the sources that proposed them."""

    provenance: Dict[str, Set[str]] = field(default_factory=dict)

    @property
    def words(self) -> Set[str]:
        return set(self.provenance)

    def add(self, word: str, source: str) -> None:
        word = _norm(word)
        if word:
            self.provenance.setdefault(word, set()).add(source)

    def __contains__(self, word: str) -> bool:
        return word in self.provenance

    def __len__(self) -> int:
        return len(self.provenance)


@dataclass(frozen=True)
class MatcherConfig:
    use_ngrams: bool = True
    use_stems: bool = True
    use_synonyms: bool = True
    use_neighbors: bool = True
    use_encoder_fallback: bool = True
    k: int = 5

    def validate(self) -> None:
        if not (self.use_ngrams or self.use_stems or self.use_synonyms or self.use_neighbors):
            raise BadConfig("matcher needs at least one candidate source")
        if self.k < 1:
            raise BadConfig("k must be >= 1")


# Rows of the ablation table, weakest first.
ABLATIONS: Dict[str, Optional[MatcherConfig]] = {
    "baseline": None,
    "n-gram matching": MatcherConfig(True, False, False, False, False),
    "k-most-similar": MatcherConfig(True, False, False, True, False),
    "n-gram matching + term-synonyms": MatcherConfig(True, False, True, False, False),
    "k-most-similar + term-synonyms": MatcherConfig(True, False, True, True, False),
    "rule-based": MatcherConfig(True, True, True, True, False),
    "rule-encoder-based": MatcherConfig(True, True, True, True, True),
}


@dataclass(frozen=True)
class MatchedPair:
    report_id: str
    annotation_index: int
    sentence_index: int
    label: int = 1
    provenance: str = "rule"


class _NeighborCache:
    def __init__(self, table: Optional[EmbeddingTable], k: int):
        self.table, self.k = table, k
        self._cache: Dict[str, List[str]] = {}

    def __call__(self, word: str) -> List[str]:
        if self.table is None:
            return []
        if word not in self._cache:
            self._cache[word] = [w for w, _ in most_similar(self.table, word, self.k)]
        return self._cache[word]


def candidate_words(term, synonyms: Optional[SynonymDict], table: Optional[EmbeddingTable],
                    config: MatcherConfig = MatcherConfig(), subheading: bool = False,
                    _neighbors=None) -> CandidateWordSet:
    """Expand one term (or a list of terms) into candidate words.

    Heading expansion uses n-grams, Porter stems, dictionary synonyms and
    embedding neighbours; subheading expansion (``subheading=True``) only
    n-grams and synonyms. The full term is always a candidate.
    """
    terms = [term] if isinstance(term, str) else list(term)
    neighbors = _neighbors or _NeighborCache(table, config.k)
    out = CandidateWordSet()
    for t in terms:
        toks = tokenize(t)
        if not toks:
            continue
        out.add(" ".join(toks), "ngram")
        ngrams = [g for n in range(1, len(toks) + 1) for g in word_ngrams(toks, n)]
        if config.use_ngrams:
            for g in ngrams:
                out.add(g, "ngram")
        if config.use_stems and not subheading:
            for w in toks:
                out.add(porter_stem(w), "stem")
        if config.use_synonyms and synonyms is not None:
            # the full term, each word and every intermediate n-gram
            for g in ngrams:
                for syn in synonyms.lookup(g):
                    out.add(syn, "synonym")
        if config.use_neighbors and not subheading:
            for w in toks:
                for nb in neighbors(w):
                    out.add(nb, "neighbor")
    return out


class _SentenceIndex:
    """All contiguous n-grams of a sentence, raw and stemmed."""

    def __init__(self, tokens: Sequence[str], max_n: int = 8):
        self.raw = self._grams(list(tokens), max_n)
        self.stemmed = self._grams(stem_tokens(tokens), max_n)

    @staticmethod
    def _grams(tokens, max_n):
        return {g for n in range(1, min(max_n, len(tokens)) + 1) for g in word_ngrams(tokens, n)}

    def count(self, cands: CandidateWordSet) -> int:
        hits = 0
        for word, prov in cands.provenance.items():
            if word in self.raw or ("stem" in prov and word in self.stemmed):
                hits += 1
        return hits


@dataclass
class ReportMatch:
    report_id: str
    pairs: List[MatchedPair]
    unmatched: List[int]
    branches: List[int]  # branch (1-4) per annotation, in annotation order


def match_report(report, synonyms: Optional[SynonymDict], table: Optional[EmbeddingTable],
                 encoder: Optional[SentenceEncoder], config: MatcherConfig = MatcherConfig(),
                 _neighbors=None, _index=None) -> ReportMatch:
    config.validate()
    neighbors = _neighbors or _NeighborCache(table, config.k)
    index = _index or [_SentenceIndex(s.tokens) for s in report.sentences]
    pairs, unmatched, branches = [], [], []
    for a_idx, ann in enumerate(report.annotations):
        h_words = candidate_words(ann.heading, synonyms, table, config, _neighbors=neighbors)
        counts = [ix.count(h_words) for ix in index]
        best = max(counts, default=0)
        s_m = [i for i, c in enumerate(counts) if c == best] if best > 0 else []
        chosen, provenance = None, "rule"
        if len(s_m) == 1:
            branch, chosen = 1, s_m[0]
        elif not s_m:
            branch = 4
            if config.use_encoder_fallback and encoder is not None and report.sentences:
                target = encoder.embed(ann.tokens() or [ann.heading])
                sims = [cosine(encoder.embed(s.tokens), target) for s in report.sentences]
                i = int(np.argmax(sims))
                if sims[i] > encoder.threshold:
                    chosen, provenance = i, "encoder"
        elif not ann.subheadings:
            branch, chosen = 2, s_m[0]
        else:
            branch = 3
            sh_words = candidate_words(ann.subheadings, synonyms, table, config, subheading=True,
                                       _neighbors=neighbors)
            sh_counts = [index[i].count(sh_words) for i in s_m]
            chosen = s_m[int(np.argmax(sh_counts))]  # argmax keeps the earliest on ties
        branches.append(branch)
        if chosen is None:
            unmatched.append(a_idx)
        else:
            pairs.append(MatchedPair(report.id, a_idx, chosen, 1, provenance))
    return ReportMatch(report.id, pairs, unmatched, branches)


@dataclass
class CorpusMatch:
    pairs: List[MatchedPair]
    unmatched: List[Tuple[str, int]]
    branch_of: Dict[Tuple[str, int], int]

    @property
    def branch_counts(self) -> Tuple[int, int, int, int]:
        c = Counter(self.branch_of.values())
        return tuple(c.get(b, 0) for b in (1, 2, 3, 4))


def match_corpus(reports, synonyms: Optional[SynonymDict] = None, table: Optional[EmbeddingTable] = None,
                 encoder: Optional[SentenceEncoder] = None, config: MatcherConfig = MatcherConfig()) -> CorpusMatch:
    config.validate()
    neighbors = _NeighborCache(table, config.k)
    pairs, unmatched, branch_of = [], [], {}
    for r in reports:
        if not r.annotations or not r.sentences:
            continue
        rm = match_report(r, synonyms, table, encoder, config, _neighbors=neighbors)
        pairs.extend(rm.pairs)
        unmatched.extend((r.id, a) for a in rm.unmatched)
        for a_idx, b in enumerate(rm.branches):
            branch_of[(r.id, a_idx)] = b
    return CorpusMatch(pairs, unmatched, branch_of)


def random_baseline(report, seed: int = 0) -> List[MatchedPair]:
    """One uniformly random sentence per annotation (seeded per report id)."""
    if not report.sentences:
        return []
    rng = np.random.default_rng([seed, zlib.crc32(report.id.encode("utf-8"))])
    n = len(report.sentences)
    return [MatchedPair(report.id, a, int(rng.integers(n)), 1, "random-baseline")
            for a in range(len(report.annotations))]


def random_baseline_corpus(reports, seed: int = 0) -> List[MatchedPair]:
    return [p for r in reports for p in random_baseline(r, seed)]


def evaluate_matching(predicted: Iterable[MatchedPair], ground_truth: Iterable[MatchedPair],
                      keys: Optional[Iterable[Tuple[str, int]]] = None) -> float:
    """Fraction of evaluated annotations whose predicted sentence is correct.

    ``keys`` defaults to every ground-truth annotation; annotations without a
    prediction count as wrong.
    """
    truth = {(g.report_id, g.annotation_index): g.sentence_index for g in ground_truth}
    keys = list(truth) if keys is None else list(keys)
    if not keys:
        raise MissingGroundTruth("nothing to evaluate")
    missing = [k for k in keys if k not in truth]
    if missing:
        raise MissingGroundTruth(f"{len(missing)} annotations lack ground truth, e.g. {missing[0]}")
    pred = {(p.report_id, p.annotation_index): p.sentence_index for p in predicted}
    correct = sum(1 for k in keys if pred.get(k) == truth[k])
    return correct / len(keys)


def branch_accuracy(result: CorpusMatch, ground_truth: Iterable[MatchedPair]) -> Dict[int, Tuple[int, float]]:
    """Per-branch (count, accuracy) over annotations that have ground truth."""
    truth = {(g.report_id, g.annotation_index): g.sentence_index for g in ground_truth}
    pred = {(p.report_id, p.annotation_index): p.sentence_index for p in result.pairs}
    out = {}
    for b in (1, 2, 3, 4):
        keys = [k for k, v in result.branch_of.items() if v == b and k in truth]
        acc = sum(pred.get(k) == truth[k] for k in keys) / len(keys) if keys else float("nan")
        out[b] = (len(keys), acc)
    return out


def read_matches(path) -> List[MatchedPair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise MalformedRecord("expected report_id, annotation_index, sentence_index[, provenance]", lineno)
            try:
                a, s = int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise MalformedRecord("indices must be integers", lineno) from exc
            prov = parts[3] if len(parts) == 4 else "manual"
            out.append(MatchedPair(parts[0], a, s, 1, prov))
    return out


def write_matches(pairs: Iterable[MatchedPair], path, provenance: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            cols = [p.report_id, str(p.annotation_index), str(p.sentence_index)]
            if provenance:
                cols.append(p.provenance)
            fh.write("\t".join(cols) + "\n")
