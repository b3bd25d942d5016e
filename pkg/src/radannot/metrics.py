"""BLEU-N with a minimum-length filter, METEOR, ROUGE-L and evaluation tables.

Annotations are scored as flat lowercase token sequences: the "/" separators
are dropped, terms are split on whitespace, and the annotations of one report
(or one sentence) are concatenated in order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import NoEligiblePairs
from .porter import stem
from .textproc import tokenize

__all__ = [
    "EvalPair",
    "annotation_tokens",
    "make_pair",
    "bleu_n",
    "sentence_bleu",
    "rouge_l_f1",
    "meteor",
    "meteor_details",
    "aggregate",
    "EvalReport",
    "evaluate",
    "format_table",
    "format_kv",
]


@dataclass(frozen=True)
class EvalPair:
    candidate: Tuple[str, ...]
    reference: Tuple[str, ...]
    n_terms: Optional[int] = None  # annotation terms in the reference; defaults to its token count

    def __post_init__(self):
        object.__setattr__(self, "candidate", tuple(self.candidate))
        object.__setattr__(self, "reference", tuple(self.reference))
        if not self.reference:
            raise ValueError("reference must be non-empty")

    @property
    def ref_terms(self) -> int:
        return len(self.reference) if self.n_terms is None else self.n_terms


def annotation_tokens(annotations: Iterable[str]) -> Tuple[List[str], int]:
    """Flatten annotation strings into scoring tokens; also return the term count.

    >>> annotation_tokens(["Calcinosis/lung/hilum/lymph nodes"])
    (['calcinosis', 'lung', 'hilum', 'lymph', 'nodes'], 4)
    """
    toks: List[str] = []
    terms = 0
    for ann in annotations:
        for term in ann.split("/"):
            words = tokenize(term)
            if words:
                terms += 1
                toks.extend(words)
    return toks, terms


def make_pair(candidate: Iterable[str], reference: Iterable[str]) -> EvalPair:
    """Build an EvalPair from candidate and reference annotation strings."""
    cand, _ = annotation_tokens(candidate)
    ref, n_terms = annotation_tokens(reference)
    return EvalPair(tuple(cand), tuple(ref), n_terms)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_stats(pair: EvalPair, N: int):
    match, total = [0] * N, [0] * N
    for n in range(1, N + 1):
        c, r = _ngrams(pair.candidate, n), _ngrams(pair.reference, n)
        match[n - 1] = sum(min(k, r[g]) for g, k in c.items())
        total[n - 1] = max(len(pair.candidate) - n + 1, 0)
    return match, total


def _bleu_from_stats(match, total, cand_len, ref_len, smooth=False) -> float:
    if cand_len == 0:
        return 0.0
    logp = 0.0
    N = len(match)
    for n in range(N):
        m, t = match[n], total[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        logp += math.log(m / t) / N
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(logp)


def bleu_n(pairs: Iterable[EvalPair], N: int) -> float:
    """Corpus BLEU-N over pairs whose reference has at least ``N`` terms.

    Clipped n-gram counts and lengths are summed over the eligible pairs
    before the precisions and the brevity penalty are formed. No smoothing.
    """
    if N not in (1, 2, 3, 4):
        raise ValueError("N must be 1, 2, 3 or 4")
    eligible = [p for p in pairs if p.ref_terms >= N]
    if not eligible:
        raise NoEligiblePairs(f"no pair has a reference with at least {N} terms")
    match, total = [0] * N, [0] * N
    c_len = r_len = 0
    for p in eligible:
        m, t = _bleu_stats(p, N)
        match = [a + b for a, b in zip(match, m)]
        total = [a + b for a, b in zip(total, t)]
        c_len += len(p.candidate)
        r_len += len(p.reference)
    return _bleu_from_stats(match, total, c_len, r_len)


def sentence_bleu(pair: EvalPair, N: int, smooth: bool = True) -> float:
    """Pair-level BLEU-N, for debugging only.

    With ``smooth`` (the default) orders above 1 get add-one smoothing, which
    makes the number non-canonical and not comparable to ``bleu_n``.
    """
    m, t = _bleu_stats(pair, N)
    return _bleu_from_stats(m, t, len(pair.candidate), len(pair.reference), smooth)


def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_f1(pair: EvalPair) -> float:
    if not pair.candidate:
        return 0.0
    lcs = _lcs(pair.candidate, pair.reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(pair.candidate), lcs / len(pair.reference)
    return 2 * p * r / (p + r)


def _chunks(alignment: Sequence[Tuple[int, int]]) -> int:
    if not alignment:
        return 0
    pairs = sorted(alignment)
    n = 1
    for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
        if not (c1 == c0 + 1 and r1 == r0 + 1):
            n += 1
    return n


def _align(cand: Sequence[str], ref: Sequence[str], max_nodes: int = 200_000):
    """Two-stage unigram alignment: exact matches first, then Porter stems.

    Objective, in order: most exact matches, most stem matches, fewest
    chunks. Exhaustive depth-first search; if the node budget runs out, the
    best alignment found so far is returned.
    """
    cs = [stem(w) for w in cand]
    rs = [stem(w) for w in ref]
    options = []
    for i, w in enumerate(cand):
        ex = [j for j, v in enumerate(ref) if v == w]
        st = [j for j, v in enumerate(ref) if v != w and rs[j] == cs[i]]
        options.append((ex, st))

    # stage-wise maximum counts give an upper bound for pruning
    remaining_exact = [0] * (len(cand) + 1)
    for i in range(len(cand) - 1, -1, -1):
        remaining_exact[i] = remaining_exact[i + 1] + (1 if options[i][0] else 0)
    remaining_any = [0] * (len(cand) + 1)
    for i in range(len(cand) - 1, -1, -1):
        remaining_any[i] = remaining_any[i + 1] + (1 if options[i][0] or options[i][1] else 0)

    best = [(-1, -1, 0), []]
    used = [False] * len(ref)
    cur: List[Tuple[int, int]] = []
    nodes = [0]

    def score(ne, ns):
        return (ne, ns, -_chunks(cur))

    def dfs(i, ne, ns):
        nodes[0] += 1
        if i == len(cand):
            sc = score(ne, ns)
            if sc > best[0]:
                best[0], best[1] = sc, list(cur)
            return
        if nodes[0] > max_nodes:
            return
        be, bs, _ = best[0]
        if ne + remaining_exact[i] < be:
            return
        if ne + remaining_exact[i] == be and ne + ns + remaining_any[i] < be + bs:
            return
        ex, st = options[i]
        for j in ex:
            if not used[j]:
                used[j] = True
                cur.append((i, j))
                dfs(i + 1, ne + 1, ns)
                cur.pop()
                used[j] = False
        for j in st:
            if not used[j]:
                used[j] = True
                cur.append((i, j))
                dfs(i + 1, ne, ns + 1)
                cur.pop()
                used[j] = False
        dfs(i + 1, ne, ns)

    dfs(0, 0, 0)
    return best[1]


def meteor_details(pair: EvalPair) -> Dict[str, float]:
    align = _align(pair.candidate, pair.reference)
    m = len(align)
    out = {"matches": m, "chunks": _chunks(align), "precision": 0.0, "recall": 0.0,
           "fmean": 0.0, "penalty": 0.0, "score": 0.0}
    if m == 0:
        return out
    p, r = m / len(pair.candidate), m / len(pair.reference)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (out["chunks"] / m) ** 3
    out.update(precision=p, recall=r, fmean=fmean, penalty=penalty, score=fmean * (1 - penalty))
    return out


def meteor(pair: EvalPair) -> float:
    return meteor_details(pair)["score"]


def aggregate(scores: Sequence[float]) -> float:
    """Arithmetic mean, summed in input order."""
    if not scores:
        raise NoEligiblePairs("nothing to aggregate")
    return math.fsum(scores) / len(scores)


COLUMNS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L")


@dataclass
class EvalReport:
    system: str
    level: str  # "report" or "sentence"
    scores: Dict[str, Optional[float]]
    n_pairs: int


def evaluate(pairs: Sequence[EvalPair], system: str = "model", level: str = "report") -> EvalReport:
    """All six scores; a BLEU order with no eligible pair is reported as None."""
    scores: Dict[str, Optional[float]] = {}
    for n in range(1, 5):
        try:
            scores[f"BLEU-{n}"] = bleu_n(pairs, n)
        except NoEligiblePairs:
            scores[f"BLEU-{n}"] = None
    scores["METEOR"] = aggregate([meteor(p) for p in pairs]) if pairs else None
    scores["ROUGE-L"] = aggregate([rouge_l_f1(p) for p in pairs]) if pairs else None
    return EvalReport(system, level, scores, len(pairs))


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


def format_table(reports: Sequence[EvalReport]) -> str:
    head = ["system", "level"] + list(COLUMNS)
    rows = [[r.system, r.level] + [_fmt(r.scores[c]) for c in COLUMNS] for r in reports]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    lines = ["  ".join(x.ljust(w) if i < 2 else x.rjust(w) for i, (x, w) in enumerate(zip(row, widths)))
             for row in [head] + rows]
    return "\n".join(lines)


def format_kv(reports: Sequence[EvalReport]) -> str:
    out = []
    for r in reports:
        for c in COLUMNS:
            key = c.lower().replace("-", "")
            out.append(f"{r.system}.{r.level}.{key}={_fmt(r.scores[c])}")
        out.append(f"{r.system}.{r.level}.pairs={r.n_pairs}")
    return "\n".join(out)
