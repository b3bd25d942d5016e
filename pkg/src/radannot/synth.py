"""Deterministic synthetic report corpus with exact ground truth.

Each positive sentence is rendered from the same draw that produces its
annotation(s), so the annotation-to-sentence ground truth is known exactly.
A finding can be worded in one of several ways, which controls which
candidate-word source the rule-based matcher needs to recover it:

========== ======================================= ===========================
mode       sentence wording                        recovered by
========== ======================================= ===========================
literal    the heading itself                      n-grams
synonym    a dictionary synonym                    dictionary synonyms
stem       an inflected form sharing the stem      Porter stems
neighbor   a related form sharing char n-grams     k-most-similar words
paraphrase unrelated wording                       sentence-encoder fallback
========== ======================================= ===========================
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import CorpusStats, Report, parse_annotation, split_sentences
from .errors import BadConfig
from .matcher import MatchedPair, SynonymDict

MODES = ("literal", "synonym", "stem", "neighbor", "paraphrase")


@dataclass(frozen=True)
class Finding:
    heading: str
    scheme: str  # "lung": lung/region/side/severity, "severity": severity only, "none": heading only
    literal: str
    synonym: Optional[str] = None
    stem: Optional[str] = None
    neighbor: Optional[str] = None
    paraphrase: Optional[str] = None
    descriptors: Tuple[str, ...] = ()

    def surface(self, mode: str) -> Optional[str]:
        return getattr(self, mode)


CATALOG: Tuple[Finding, ...] = (
    Finding("Opacity", "lung", "opacity", "airspace disease", "opacities", "opacified", "haziness", ("patchy", "hazy")),
    Finding("Nodule", "lung", "nodule", "rounded density", "nodules", "nodular", "focal lesion", ("solitary", "noncalcified")),
    Finding("Atelectasis", "lung", "atelectasis", "subsegmental collapse", None, "atelectatic", "volume loss", ("linear", "platelike")),
    Finding("Pleural Effusion", "side", "pleural effusion", "pleural fluid", "pleural effusions", None, "costophrenic blunting", ("layering", "loculated")),
    Finding("Cardiomegaly", "severity", "cardiomegaly", "enlarged heart", "cardiomegalies", "cardiomegalic", "prominent cardiac silhouette", ("stable", "unchanged")),
    Finding("Emphysema", "none", "emphysema", "hyperexpanded lungs", None, "emphysematous", None, ("centrilobular", "bullous")),
    Finding("Cicatrix", "lung", "cicatrix", "scarring", None, "cicatricial", "fibrotic change", ("apical", "chronic")),
    Finding("Pulmonary Disease, Chronic Obstructive", "none", "chronic obstructive pulmonary disease", "copd", None, None, None, ("known", "longstanding")),
    Finding("Granulomatous Disease", "none", "granulomatous disease", "old granulomas", None, None, "healed infection", ("remote", "sequela")),
    Finding("Calcinosis", "lung", "calcinosis", "calcification", None, "calcinotic", "dense foci", ("punctate", "coarse")),
    Finding("Pulmonary Congestion", "severity", "pulmonary congestion", "vascular congestion", "pulmonary congestions", None, "interstitial edema", ("cephalized", "engorged")),
    Finding("Osteophyte", "spine", "osteophyte", "degenerative spurring", "osteophytes", "osteophytic", "bony spurs", ("anterior", "bridging")),
    Finding("Scoliosis", "severity", "scoliosis", "spinal curvature", None, "scoliotic", "curved spine", ("dextroconvex", "levoconvex")),
    Finding("Pneumothorax", "side", "pneumothorax", "free pleural air", "pneumothoraces", None, None, ("apical", "tiny")),
    Finding("Infiltrate", "lung", "infiltrate", "consolidation", "infiltrates", "infiltrative", "patchy shadowing", ("streaky", "confluent")),
    Finding("Hernia, Hiatal", "none", "hiatal hernia", "gastric herniation", None, None, None, ("retrocardiac", "sliding")),
)

SEVERITIES = ("mild", "moderate", "severe", "small", "large")
SIDES = ("left", "right", "bilateral")
REGIONS = ("base", "apex", "upper lobe", "lower lobe", "hilum")
SPINE_REGIONS = ("thoracic vertebrae", "lumbar vertebrae")

FILLERS = (
    "the heart size is normal",
    "the lungs are clear",
    "no acute cardiopulmonary abnormality",
    "the mediastinal contours are within normal limits",
    "there is no focal consolidation",
    "osseous structures are intact",
    "the trachea is midline",
    "no acute bony abnormality identified",
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_reports: int = 1000
    sentences_per_report: Tuple[int, int] = (4, 10)
    negative_fraction: float = 0.6
    multi_fraction: float = 0.15
    synonym_fraction: float = 0.2
    stem_fraction: float = 0.1
    neighbor_fraction: float = 0.1
    paraphrase_fraction: float = 0.03
    distractor_fraction: float = 0.3
    normal_fraction: float = 0.0

    def validate(self) -> None:
        fracs = (self.negative_fraction, self.multi_fraction, self.synonym_fraction, self.stem_fraction,
                 self.neighbor_fraction, self.paraphrase_fraction, self.distractor_fraction, self.normal_fraction)
        if any(not 0.0 <= f <= 1.0 for f in fracs):
            raise BadConfig("synth fractions must lie in [0, 1]")
        if self.synonym_fraction + self.stem_fraction + self.neighbor_fraction + self.paraphrase_fraction > 1.0:
            raise BadConfig("wording fractions sum to more than 1")
        lo, hi = self.sentences_per_report
        if lo < 1 or hi < lo:
            raise BadConfig(f"bad sentences_per_report range {self.sentences_per_report}")
        if self.n_reports < 0:
            raise BadConfig("n_reports must be non-negative")


@dataclass
class SynthCorpus:
    reports: List[Report]
    matches: List[MatchedPair]
    synonyms: SynonymDict
    stats: CorpusStats
    modes: Dict[Tuple[str, int], str] = field(default_factory=dict)


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _draw_subheadings(rng, finding: Finding):
    """Return (annotation subheadings, words placed before the finding, words after)."""
    if finding.scheme == "lung":
        region, side, sev = _pick(rng, REGIONS), _pick(rng, SIDES), _pick(rng, SEVERITIES[:3])
        return ["lung", region, side, sev], [sev], ["in", "the", side, "lung", region]
    if finding.scheme == "side":
        side, sev = _pick(rng, SIDES), _pick(rng, ("small", "large"))
        return [side, sev], [sev, side], []
    if finding.scheme == "severity":
        sev = _pick(rng, SEVERITIES[:3])
        return [sev], [sev], []
    if finding.scheme == "spine":
        region = _pick(rng, SPINE_REGIONS)
        return [region], [], ["of", "the"] + region.split()
    return [], [], []


def _choose_mode(rng, cfg: SynthConfig, finding: Finding) -> str:
    u = rng.random()
    edges = (
        ("synonym", cfg.synonym_fraction),
        ("stem", cfg.stem_fraction),
        ("neighbor", cfg.neighbor_fraction),
        ("paraphrase", cfg.paraphrase_fraction),
    )
    acc = 0.0
    for mode, frac in edges:
        acc += frac
        if u < acc:
            return mode if finding.surface(mode) else "literal"
    return "literal"


def generate(config: SynthConfig = SynthConfig()) -> SynthCorpus:
    """Generate reports, exact ground-truth matches, the dictionary and stats."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    synonyms = SynonymDict()
    for f in CATALOG:
        if f.synonym:
            synonyms.add(f.heading.lower(), f.synonym)

    reports: List[Report] = []
    matches: List[MatchedPair] = []
    modes: Dict[Tuple[str, int], str] = {}
    n_sent = n_ann = n_one = n_several = 0
    sent_words = ann_words = 0

    lo, hi = config.sentences_per_report
    for r in range(config.n_reports):
        rid = f"SYN{r:05d}"
        n = int(rng.integers(lo, hi + 1))
        normal = rng.random() < config.normal_fraction
        positive = [False] * n if normal else [bool(rng.random() >= config.negative_fraction) for _ in range(n)]
        available = list(range(len(CATALOG)))
        rng.shuffle(available)

        sentences: List[List[str]] = []
        ann_raw: List[str] = []
        gt: List[Tuple[int, int]] = []  # (annotation index, sentence index)
        headings_with_subs: List[int] = []
        heading_only: set = set()
        for s_idx in range(n):
            if not positive[s_idx] or not available:
                sentences.append([])  # filled with a negative later
                continue
            k = 2 if (rng.random() < config.multi_fraction and len(available) >= 2) else 1
            clauses = []
            for _ in range(k):
                fi = available.pop()
                f = CATALOG[fi]
                subs, before, after = _draw_subheadings(rng, f)
                mode = _choose_mode(rng, config, f)
                desc = [_pick(rng, f.descriptors)] if f.descriptors else []
                clauses.append(before + desc + f.surface(mode).split() + after)
                raw = "/".join([f.heading] + subs)
                modes[(rid, len(ann_raw))] = mode
                gt.append((len(ann_raw), s_idx))
                ann_raw.append(raw)
                if subs and mode == "literal":
                    headings_with_subs.append(fi)
                elif not subs:
                    heading_only.add(fi)
            words = ["there", "is"] + clauses[0]
            for c in clauses[1:]:
                words += ["with"] + c
            sentences.append(words)

        used = set(fi for fi in range(len(CATALOG)) if fi not in available)
        for s_idx in range(n):
            if sentences[s_idx]:
                continue
            if headings_with_subs and rng.random() < config.distractor_fraction:
                f = CATALOG[_pick(rng, headings_with_subs)]
                sentences[s_idx] = ["no", "new"] + f.literal.split() + ["is", "seen"]
            else:
                pool = [i for i in range(len(CATALOG)) if i not in used]
                if pool and rng.random() < 0.25:
                    f = CATALOG[_pick(rng, pool)]
                    sentences[s_idx] = ["no"] + f.literal.split()
                else:
                    sentences[s_idx] = _pick(rng, FILLERS).split()

        text = " ".join(" ".join(w).capitalize() + "." for w in sentences)
        if normal:
            ann_raw = ["normal"]
            gt = []
        findings_text = text
        sents = tuple(split_sentences(findings_text, None, rid))
        report = Report(
            id=rid,
            findings_text=findings_text,
            annotations=tuple(parse_annotation(a) for a in ann_raw),
            is_normal=normal,
            sentences=sents,
        )
        reports.append(report)
        for a_idx, s_idx in gt:
            matches.append(MatchedPair(rid, a_idx, s_idx, 1, "manual"))

        if not normal:
            n_sent += n
            n_ann += len(ann_raw)
            hosted = Counter(s for _, s in gt)
            n_one += sum(1 for c in hosted.values() if c == 1)
            n_several += sum(1 for c in hosted.values() if c > 1)
            sent_words += sum(len(" ".join(w).split()) for w in sentences)
            ann_words += sum(len(t.split()) for a in ann_raw for t in a.replace(",", " ").split("/"))

    n_reports = sum(1 for r in reports if not r.is_normal)
    stats = CorpusStats(
        reports=n_reports,
        sentences=n_sent,
        annotations=n_ann,
        sentences_without=n_sent - n_one - n_several,
        sentences_with=n_one + n_several,
        sentences_one=n_one,
        sentences_several=n_several,
        avg_words_sentence=sent_words / n_sent if n_sent else 0.0,
        avg_words_annotation=ann_words / n_ann if n_ann else 0.0,
    ) if n_reports else CorpusStats()
    return SynthCorpus(reports, matches, synonyms, stats, modes)
