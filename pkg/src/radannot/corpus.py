"""Report corpora: parsing, preprocessing, filtering, splitting and statistics.

Corpus files hold one JSON object per line::

    {"id": "CXR1", "findings": "...", "impression": "...",
     "annotations": ["Cardiomegaly/severe", "Pericardial Effusion"]}

Missing keys are treated as empty.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadRatios,
    EmptyAnnotation,
    MalformedAnnotation,
    MalformedRecord,
    NoUsableText,
)
from .textproc import tokenize

MAX_TERMS = 8
SEPARATOR = "/"
NORMAL_MARKER = "normal"


@dataclass(frozen=True)
class Annotation:
    heading: str
    subheadings: Tuple[str, ...]
    raw: str

    @property
    def terms(self) -> Tuple[str, ...]:
        return (self.heading,) + self.subheadings

    def as_sentence(self) -> str:
        """The annotation with slashes removed, used by the sentence encoder."""
        return " ".join(self.terms)

    def tokens(self) -> List[str]:
        return tokenize(self.as_sentence())


@dataclass(frozen=True)
class Sentence:
    report_id: str
    index: int
    text: str
    tokens: Tuple[str, ...]


@dataclass(frozen=True)
class Report:
    id: str
    comparison: Optional[str] = None
    indication: Optional[str] = None
    findings_text: Optional[str] = None
    impression_text: Optional[str] = None
    annotations: Tuple[Annotation, ...] = ()
    is_normal: bool = False
    sentences: Tuple[Sentence, ...] = field(default=(), compare=False)

    @property
    def usable(self) -> bool:
        return bool((self.findings_text or "").strip() or (self.impression_text or "").strip())


@dataclass(frozen=True)
class CorpusSplit:
    train_ids: Tuple[str, ...]
    val_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]
    seed: int
    ratios: Tuple[float, float, float]


@dataclass(frozen=True)
class CorpusStats:
    reports: int = 0
    sentences: int = 0
    annotations: int = 0
    sentences_without: int = 0
    sentences_with: int = 0
    sentences_one: int = 0
    sentences_several: int = 0
    avg_words_sentence: float = 0.0
    avg_words_annotation: float = 0.0

    ROWS = (
        ("reports", "# reports"),
        ("sentences", "# sentences"),
        ("annotations", "# annotations"),
        ("sentences_without", "# sentences without annotations"),
        ("sentences_with", "# sentences with annotations"),
        ("sentences_one", "# sentences with only one annotation"),
        ("sentences_several", "# sentences with several annotations"),
        ("avg_words_sentence", "average # of words in sentences"),
        ("avg_words_annotation", "average # of words in annotations"),
    )

    def format_table(self) -> str:
        width = max(len(label) for _, label in self.ROWS)
        lines = []
        for key, label in self.ROWS:
            value = getattr(self, key)
            text = f"{value:.2f}" if isinstance(value, float) else f"{value:,}"
            lines.append(f"{label.ljust(width)}  {text:>8}")
        return "\n".join(lines)

    def format_kv(self) -> str:
        out = []
        for key, _ in self.ROWS:
            value = getattr(self, key)
            out.append(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
        return "\n".join(out)


def parse_annotation(raw: str) -> Annotation:
    """Parse a ``heading/sub1/sub2`` string.

    Terms are lowercased and trimmed; ``raw`` keeps the original casing for
    display.

    >>> parse_annotation("Cardiomegaly/severe").subheadings
    ('severe',)
    """
    text = raw.strip()
    if not text:
        raise EmptyAnnotation("annotation is empty")
    fields = [f.strip() for f in text.split(SEPARATOR)]
    if any(not f for f in fields):
        raise MalformedAnnotation(f"empty term in annotation {raw!r}")
    if len(fields) > MAX_TERMS:
        raise MalformedAnnotation(f"{len(fields)} terms in {raw!r}; at most {MAX_TERMS} allowed")
    terms = [" ".join(f.lower().split()) for f in fields]
    return Annotation(heading=terms[0], subheadings=tuple(terms[1:]), raw=SEPARATOR.join(fields))


_DIGITS = re.compile(r"[0-9]")
# Everything that is not a letter, whitespace or the period.
_PUNCT = re.compile(r"[^\w\s.]|_")
_DEID = re.compile(r"(?<![A-Za-z])XXXX(?![A-Za-z])")
_SPACE_BEFORE_PERIOD = re.compile(r"\s+\.")
_SPACES = re.compile(r"\s+")


def preprocess_text(raw: str) -> str:
    """Strip de-identification tokens, digits, punctuation and extra spaces.

    >>> preprocess_text("Stable XXXX hardware.")
    'Stable hardware.'
    """
    text = _DIGITS.sub("", raw)
    text = _PUNCT.sub(" ", text)
    text = _DEID.sub(" ", text)
    text = _SPACE_BEFORE_PERIOD.sub(".", text)
    return _SPACES.sub(" ", text).strip()


_SENT_END = re.compile(r"(?<=[.?!])(?:\s+|$)")


def _split_section(text: str) -> List[str]:
    return [p for p in _SENT_END.split(text) if p.strip()]


def split_sentences(findings_text: Optional[str], impression_text: Optional[str],
                    report_id: str = "") -> List[Sentence]:
    """Split Findings then Impression into preprocessed, tokenized sentences."""
    findings_text = findings_text or ""
    impression_text = impression_text or ""
    if not findings_text.strip() and not impression_text.strip():
        raise NoUsableText(f"report {report_id!r} has neither findings nor impression")
    out: List[Sentence] = []
    for section in (findings_text, impression_text):
        for piece in _split_section(section):
            text = preprocess_text(piece)
            tokens = tokenize(text)
            if tokens:
                out.append(Sentence(report_id, len(out), text, tuple(tokens)))
    return out


def _is_normal(raw_annotations: Sequence[str]) -> bool:
    return any(a.strip().lower() == NORMAL_MARKER for a in raw_annotations)


def report_from_record(record: Dict, line: Optional[int] = None) -> Report:
    if not isinstance(record, dict):
        raise MalformedRecord("record is not an object", line)
    rid = record.get("id")
    if rid is None or str(rid).strip() == "":
        raise MalformedRecord("record has no id", line)
    raw_anns = record.get("annotations") or []
    if not isinstance(raw_anns, list) or not all(isinstance(a, str) for a in raw_anns):
        raise MalformedRecord("annotations must be a list of strings", line)
    try:
        anns = tuple(parse_annotation(a) for a in raw_anns)
    except (EmptyAnnotation, MalformedAnnotation) as exc:
        raise MalformedRecord(str(exc), line) from exc
    findings = record.get("findings") or None
    impression = record.get("impression") or None
    rid = str(rid)
    try:
        sentences = tuple(split_sentences(findings, impression, rid))
    except NoUsableText:
        sentences = ()
    return Report(
        id=rid,
        comparison=record.get("comparison") or None,
        indication=record.get("indication") or None,
        findings_text=findings,
        impression_text=impression,
        annotations=anns,
        is_normal=_is_normal(raw_anns),
        sentences=sentences,
    )


def report_to_record(report: Report) -> Dict:
    return {
        "id": report.id,
        "comparison": report.comparison or "",
        "indication": report.indication or "",
        "findings": report.findings_text or "",
        "impression": report.impression_text or "",
        "annotations": [a.raw for a in report.annotations],
    }


def parse_corpus(lines: Iterable[str]) -> List[Report]:
    reports = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON ({exc.msg})", lineno) from exc
        reports.append(report_from_record(record, lineno))
    return reports


def load_corpus(path) -> List[Report]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def save_corpus(reports: Iterable[Report], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(report_to_record(r), ensure_ascii=False) + "\n")


def filter_normals(reports: Sequence[Report]) -> List[Report]:
    return [r for r in reports if not r.is_normal]


def filter_unusable(reports: Sequence[Report]) -> List[Report]:
    return [r for r in reports if r.sentences]


def compute_stats(reports: Sequence[Report], matches=()) -> CorpusStats:
    """Table-style corpus statistics.

    ``matches`` are MatchedPair-like objects with ``report_id``,
    ``sentence_index`` and ``label``; only positive pairs with a sentence
    count towards the with/without split.
    """
    n_sent = sum(len(r.sentences) for r in reports)
    n_ann = sum(len(r.annotations) for r in reports)
    if not reports:
        return CorpusStats()
    per_sentence: Dict[Tuple[str, int], int] = {}
    for m in matches:
        if getattr(m, "label", 1) != 1 or m.sentence_index is None:
            continue
        key = (m.report_id, m.sentence_index)
        per_sentence[key] = per_sentence.get(key, 0) + 1
    one = sum(1 for c in per_sentence.values() if c == 1)
    several = sum(1 for c in per_sentence.values() if c > 1)
    sent_words = sum(len(s.tokens) for r in reports for s in r.sentences)
    ann_words = sum(len(a.tokens()) for r in reports for a in r.annotations)
    return CorpusStats(
        reports=len(reports),
        sentences=n_sent,
        annotations=n_ann,
        sentences_without=n_sent - one - several,
        sentences_with=one + several,
        sentences_one=one,
        sentences_several=several,
        avg_words_sentence=sent_words / n_sent if n_sent else 0.0,
        avg_words_annotation=ann_words / n_ann if n_ann else 0.0,
    )


def make_splits(reports: Sequence[Report], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> CorpusSplit:
    """Seeded shuffle then partition; val/test sizes are floored, train takes the rest."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative fractions summing to 1, got {ratios}")
    ids = [r.id for r in reports]
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    return CorpusSplit(
        train_ids=tuple(shuffled[:n_train]),
        val_ids=tuple(shuffled[n_train : n_train + n_val]),
        test_ids=tuple(shuffled[n_train + n_val :]),
        seed=seed,
        ratios=ratios,
    )


def write_split(split: CorpusSplit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, ids in (("train", split.train_ids), ("val", split.val_ids), ("test", split.test_ids)):
            fh.write(f"[{name}]\n")
            for rid in ids:
                fh.write(rid + "\n")


def read_split(path, seed: int = 0) -> CorpusSplit:
    sections: Dict[str, List[str]] = {"train": [], "val": [], "test": []}
    current = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                if current not in sections:
                    raise MalformedRecord(f"unknown split section {current!r}", lineno)
                continue
            if current is None:
                raise MalformedRecord("id before any section header", lineno)
            sections[current].append(line)
    n = sum(len(v) for v in sections.values()) or 1
    ratios = tuple(len(sections[k]) / n for k in ("train", "val", "test"))
    return CorpusSplit(tuple(sections["train"]), tuple(sections["val"]), tuple(sections["test"]), seed, ratios)
