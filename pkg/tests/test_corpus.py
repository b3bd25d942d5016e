import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from radannot.corpus import (
    CorpusStats,
    Report,
    compute_stats,
    filter_normals,
    filter_unusable,
    load_corpus,
    make_splits,
    parse_annotation,
    parse_corpus,
    preprocess_text,
    read_split,
    report_from_record,
    save_corpus,
    split_sentences,
    write_split,
)
from radannot.errors import (
    BadRatios,
    DataError,
    EmptyAnnotation,
    MalformedAnnotation,
    MalformedRecord,
    NoUsableText,
)
from radannot.matcher import MatchedPair


def test_parse_annotation_examples():
    a = parse_annotation("Cardiomegaly/severe")
    assert a.heading == "cardiomegaly" and a.subheadings == ("severe",)
    assert a.raw == "Cardiomegaly/severe"
    b = parse_annotation("Pericardial Effusion")
    assert b.heading == "pericardial effusion" and b.subheadings == ()


def test_parse_annotation_errors():
    with pytest.raises(MalformedAnnotation):
        parse_annotation("a/b/c/d/e/f/g/h/i")
    with pytest.raises(MalformedAnnotation):
        parse_annotation("lung//left")
    with pytest.raises(EmptyAnnotation):
        parse_annotation("   ")
    assert len(parse_annotation("a/b/c/d/e/f/g/h").terms) == 8


term = st.text(alphabet="abcdefgh XYZ", min_size=1, max_size=8).filter(lambda t: t.strip())


@given(st.lists(term, min_size=1, max_size=8))
def test_raw_roundtrip(terms):
    raw = "/".join(terms)
    a = parse_annotation(raw)
    assert a.raw == "/".join(t.strip() for t in terms)
    assert len(a.terms) == len(terms)
    assert parse_annotation(a.raw) == a


@pytest.mark.parametrize("raw,expected", [
    ("Stable XXXX hardware.", "Stable hardware."),
    ("2 views of the chest", "views of the chest"),
    ("Low  lung   volumes.", "Low lung volumes."),
    ("XXXX. No acute disease", ". No acute disease"),
    ("Heart size is normal, lungs clear.", "Heart size is normal lungs clear."),
    ("XXXXX stays", "XXXXX stays"),
])
def test_preprocess_examples(raw, expected):
    assert preprocess_text(raw) == expected


@given(st.text())
def test_preprocess_output_is_clean(raw):
    out = preprocess_text(raw)
    assert not any(c.isdigit() for c in out if c.isascii())
    assert "  " not in out
    assert out == out.strip()


def test_split_sentences_examples():
    s = split_sentences("Low lung volumes. Calcified hilar lymph.", "", "r1")
    assert [x.index for x in s] == [0, 1]
    assert s[1].tokens == ("calcified", "hilar", "lymph")
    s = split_sentences("", "No acute disease.", "r2")
    assert len(s) == 1 and s[0].text == "No acute disease."
    with pytest.raises(NoUsableText):
        split_sentences("", "", "r3")


def test_split_orders_findings_before_impression():
    s = split_sentences("Heart normal. Lungs clear?", "No acute disease!", "r")
    # "?" and "!" end sentences but are stripped like other punctuation
    assert [x.text for x in s] == ["Heart normal.", "Lungs clear", "No acute disease"]


def test_split_drops_empty_sentences():
    s = split_sentences("XXXX. 1. Lungs clear.", None, "r")
    assert [x.tokens for x in s] == [("lungs", "clear")]


def _rec(i, anns=(), findings="Lungs clear.", impression=""):
    return {"id": str(i), "findings": findings, "impression": impression, "annotations": list(anns)}


def test_normal_marker_and_filter():
    reports = [report_from_record(_rec(1, ["normal"])), report_from_record(_rec(2, ["Opacity/lung"])),
               report_from_record(_rec(3, ["Normal"]))]
    assert [r.is_normal for r in reports] == [True, False, True]
    assert [r.id for r in filter_normals(reports)] == ["2"]
    assert filter_normals([r for r in reports if not r.is_normal]) == [reports[1]]
    assert filter_normals([reports[0], reports[2]]) == []


def test_unusable_reports_are_filtered():
    r = report_from_record(_rec(1, ["Opacity"], findings="", impression=""))
    assert not r.usable and r.sentences == ()
    assert filter_unusable([r]) == []


def test_malformed_line_is_named(tmp_path):
    lines = [json.dumps(_rec(1)), json.dumps(_rec(2, ["a//b"]))]
    with pytest.raises(MalformedRecord, match="line 2"):
        parse_corpus(lines)
    with pytest.raises(MalformedRecord, match="line 1"):
        parse_corpus(["{not json"])
    with pytest.raises(MalformedRecord, match="line 1"):
        parse_corpus([json.dumps({"findings": "x."})])
    assert issubclass(MalformedRecord, DataError)


def test_corpus_file_roundtrip(tmp_path, small_synth):
    path = tmp_path / "c.jsonl"
    save_corpus(small_synth.reports, path)
    back = load_corpus(path)
    assert back == small_synth.reports
    assert [r.sentences for r in back] == [r.sentences for r in small_synth.reports]


def test_missing_keys_mean_empty():
    r = report_from_record({"id": "x", "impression": "Clear."})
    assert r.findings_text is None and r.annotations == () and len(r.sentences) == 1


def test_stats_invariants_and_empty():
    assert compute_stats([]) == CorpusStats()
    reports = [report_from_record(_rec(1, ["A", "B", "C"], findings="A here. B and C here. Nothing."))]
    matches = [MatchedPair("1", 0, 0), MatchedPair("1", 1, 1), MatchedPair("1", 2, 1)]
    s = compute_stats(reports, matches)
    assert (s.sentences, s.annotations) == (3, 3)
    assert (s.sentences_with, s.sentences_without, s.sentences_one, s.sentences_several) == (2, 1, 1, 1)
    assert s.sentences_with == s.sentences_one + s.sentences_several
    assert s.avg_words_sentence == pytest.approx(7 / 3)
    assert s.avg_words_annotation == 1.0
    no_matches = compute_stats(reports)
    assert no_matches.sentences_with == 0 and no_matches.sentences_without == 3


def test_stats_match_generator(small_synth):
    assert compute_stats(small_synth.reports, small_synth.matches) == small_synth.stats


def test_stats_table_formats():
    s = CorpusStats(reports=2564, sentences=16400, avg_words_sentence=6.65)
    assert "2,564" in s.format_table()
    assert "avg_words_sentence=6.650000" in s.format_kv().splitlines()


def _reports(n):
    return [Report(id=f"r{i}") for i in range(n)]


def test_split_sizes():
    sp = make_splits(_reports(2564), (0.8, 0.1, 0.1), seed=7)
    assert (len(sp.train_ids), len(sp.val_ids), len(sp.test_ids)) == (2052, 256, 256)


@given(st.integers(0, 300), st.integers(0, 10))
def test_split_partitions(n, seed):
    reports = _reports(n)
    sp = make_splits(reports, (0.8, 0.1, 0.1), seed)
    ids = sp.train_ids + sp.val_ids + sp.test_ids
    assert sorted(ids) == sorted(r.id for r in reports)
    assert make_splits(reports, (0.8, 0.1, 0.1), seed) == sp


def test_split_bad_ratios():
    with pytest.raises(BadRatios):
        make_splits(_reports(3), (0.5, 0.5, 0.5))
    with pytest.raises(BadRatios):
        make_splits(_reports(3), (1.2, -0.1, -0.1))


def test_split_file_roundtrip(tmp_path):
    sp = make_splits(_reports(20), seed=3)
    write_split(sp, tmp_path / "s.txt")
    back = read_split(tmp_path / "s.txt", seed=3)
    assert (back.train_ids, back.val_ids, back.test_ids) == (sp.train_ids, sp.val_ids, sp.test_ids)
