import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radannot.corpus import report_from_record
from radannot.embed import EmbeddingTable, SentenceEncoder, train_embeddings, EmbeddingConfig
from radannot.errors import BadConfig, MalformedRecord, MissingGroundTruth
from radannot.matcher import (
    ABLATIONS,
    MatchedPair,
    MatcherConfig,
    SynonymDict,
    branch_accuracy,
    candidate_words,
    evaluate_matching,
    match_corpus,
    match_report,
    random_baseline,
    random_baseline_corpus,
    read_matches,
    write_matches,
)
from radannot.synth import SynthConfig, generate

ONLY_STEMS = MatcherConfig(use_ngrams=False, use_stems=True, use_synonyms=False, use_neighbors=False,
                           use_encoder_fallback=False)
NGRAM_SYN = ABLATIONS["n-gram matching + term-synonyms"]


def report(findings, annotations, rid="r"):
    return report_from_record({"id": rid, "findings": findings, "annotations": annotations})


def test_synonym_dict_is_symmetric(tmp_path):
    d = SynonymDict([("scarring", "Cicatrix"), ("chronic obstructive", "copd")])
    assert d.lookup("cicatrix") == {"scarring"} and d.lookup("scarring") == {"cicatrix"}
    assert d.lookup("COPD") == {"chronic obstructive"}
    path = tmp_path / "d.tsv"
    d.save(path)
    text = path.read_text()
    path.write_text("# comment line\n" + text + "\n")
    assert SynonymDict.load(path).entries == d.entries


def test_synonym_dict_bad_line(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("a\tb\nno tab here\n")
    with pytest.raises(MalformedRecord, match="line 2"):
        SynonymDict.load(path)


def test_candidate_words_examples():
    d = SynonymDict([("scarring", "cicatrix"), ("chronic obstructive", "copd")])
    assert "scarring" in candidate_words("cicatrix", d, None)
    assert "copd" in candidate_words("pulmonary disease, chronic obstructive", d, None)
    assert candidate_words("scarring", None, None, ONLY_STEMS).words == {"scarring", "scar"}


def test_candidate_words_sources_and_subheadings():
    t = EmbeddingTable.from_vectors(["nodule", "nodular", "mass", "chair"],
                                    np.array([[1, 0.1], [1, 0.2], [0.9, 0.3], [-1, 0]]))
    cfg = MatcherConfig(k=2)
    cw = candidate_words("pulmonary nodule", None, t, cfg)
    assert {"pulmonary nodule", "pulmonary", "nodule", "pulmonari", "nodul", "nodular", "mass"} <= cw.words
    assert "neighbor" in cw.provenance["nodular"] and "stem" in cw.provenance["nodul"]
    sub = candidate_words(["pulmonary nodule"], None, t, cfg, subheading=True)
    assert sub.words == {"pulmonary nodule", "pulmonary", "nodule"}
    assert all(w == w.lower() for w in cw.words)


def test_match_via_synonym():
    r = report("Low lung volumes. The lungs are otherwise clear.", ["Lung/hypoinflation"])
    d = SynonymDict([("low lung volumes", "hypoinflation")])
    # heading "lung" hits both sentences through its stem; the subheading synonym decides
    m = match_report(r, d, None, None, MatcherConfig(use_neighbors=False, use_encoder_fallback=False))
    assert m.pairs == [MatchedPair("r", 0, 0, 1, "rule")] and m.branches == [3]


def test_branch1_unique_literal():
    r = report("Heart size normal. Small pleural effusion. No pneumothorax.", ["Pleural Effusion"])
    m = match_report(r, None, None, None, NGRAM_SYN)
    assert m.pairs[0].sentence_index == 1 and m.branches == [1]


def test_branch2_earliest_for_heading_only():
    r = report("Mild cardiomegaly. Cardiomegaly again. Clear lungs.", ["Cardiomegaly"])
    m = match_report(r, None, None, None, NGRAM_SYN)
    assert m.pairs[0].sentence_index == 0 and m.branches == [2]


def test_branch3_subheadings_and_tie():
    r = report("Opacity in the right base. Opacity in the left base. Opacity again.", ["Opacity/lung/base/left"])
    m = match_report(r, None, None, None, NGRAM_SYN)
    assert m.pairs[0].sentence_index == 1 and m.branches == [3]
    r = report("Opacity here. Opacity there.", ["Opacity/apex"])
    m = match_report(r, None, None, None, NGRAM_SYN)
    assert m.pairs[0].sentence_index == 0 and m.branches == [3]


def _encoder_world():
    words = ["heart", "normal", "bones", "intact", "fluid", "layering", "effusion", "clear"]
    vecs = np.eye(8)
    vecs[words.index("effusion")] = vecs[words.index("fluid")] * 0.9 + vecs[words.index("layering")] * 0.9
    return EmbeddingTable.from_vectors(words, vecs)


def test_branch4_encoder_fallback():
    t = _encoder_world()
    r = report("Heart normal. Bones intact. Fluid layering.", ["Effusion"])
    enc = SentenceEncoder(t, threshold=0.5)
    m = match_report(r, None, t, enc, MatcherConfig(use_neighbors=False, use_stems=False))
    assert m.pairs == [MatchedPair("r", 0, 2, 1, "encoder")] and m.branches == [4]
    assert enc.similarity(r.sentences[2].tokens, ["effusion"]) == pytest.approx(1.0)
    # below threshold -> unmatched
    m = match_report(r, None, t, SentenceEncoder(t, threshold=1.0), MatcherConfig(use_neighbors=False))
    assert m.pairs == [] and m.unmatched == [0]
    # fallback disabled -> unmatched, still branch 4
    off = MatcherConfig(use_neighbors=False, use_encoder_fallback=False)
    m = match_report(r, None, t, enc, off)
    assert m.unmatched == [0] and m.branches == [4]


def test_all_branch1_histogram():
    reports = [report(f"{h} present. Nothing else.", [h], rid=str(i))
               for i, h in enumerate(["Opacity", "Nodule", "Cardiomegaly"])]
    res = match_corpus(reports, None, None, None, NGRAM_SYN)
    assert res.branch_counts == (3, 0, 0, 0)


def test_matcher_config_validation():
    with pytest.raises(BadConfig):
        MatcherConfig(False, False, False, False).validate()
    with pytest.raises(BadConfig):
        MatcherConfig(k=0).validate()


def test_evaluate_matching():
    gt = [MatchedPair("a", 0, 1), MatchedPair("a", 1, 0)]
    assert evaluate_matching(gt, gt) == 1.0
    assert evaluate_matching([MatchedPair("a", 0, 1)], gt) == 0.5
    assert evaluate_matching([MatchedPair("a", 0, 0), MatchedPair("a", 1, 1)], gt) == 0.0
    with pytest.raises(MissingGroundTruth):
        evaluate_matching(gt, gt, keys=[("b", 0)])
    with pytest.raises(MissingGroundTruth):
        evaluate_matching(gt, [])


def test_random_baseline_rules():
    one = report("Only sentence.", ["A", "B"])
    assert all(p.sentence_index == 0 for p in random_baseline(one, 5))
    many = report("A. B. C. D. E.", ["X", "Y", "Z"])
    assert random_baseline(many, 3) == random_baseline(many, 3)
    assert {p.provenance for p in random_baseline(many, 3)} == {"random-baseline"}


def test_random_baseline_law_of_large_numbers():
    sc = generate(SynthConfig(seed=4, n_reports=600, sentences_per_report=(8, 8)))
    n_ann = len(sc.matches)
    assert n_ann >= 1000
    acc = evaluate_matching(random_baseline_corpus(sc.reports, 0), sc.matches)
    assert abs(acc - 1 / 8) <= 0.05


def test_match_file_roundtrip(tmp_path):
    pairs = [MatchedPair("r1", 0, 2, 1, "rule"), MatchedPair("r2", 1, 0, 1, "encoder")]
    write_matches(pairs, tmp_path / "m.tsv")
    assert read_matches(tmp_path / "m.tsv") == pairs
    write_matches(pairs, tmp_path / "plain.tsv", provenance=False)
    assert (tmp_path / "plain.tsv").read_text().splitlines()[0] == "r1\t0\t2"
    back = read_matches(tmp_path / "plain.tsv")
    assert [(p.report_id, p.annotation_index, p.sentence_index) for p in back] == [("r1", 0, 2), ("r2", 1, 0)]


def test_match_file_bad_line(tmp_path):
    (tmp_path / "m.tsv").write_text("r1\t0\t1\nr2\tx\t1\n")
    with pytest.raises(MalformedRecord, match="line 2"):
        read_matches(tmp_path / "m.tsv")


# -- synthetic corpus ---------------------------------------------------------


@pytest.fixture(scope="module")
def full_match(synth_corpus, synth_table, synth_encoder):
    return match_corpus(synth_corpus.reports, synth_corpus.synonyms, synth_table, synth_encoder, MatcherConfig())


def test_full_synthetic_accuracy(synth_corpus, full_match):
    acc = evaluate_matching(full_match.pairs, synth_corpus.matches)
    assert acc >= 0.95


def test_indices_valid_and_one_sentence_per_annotation(synth_corpus, full_match):
    by_id = {r.id: r for r in synth_corpus.reports}
    seen = set()
    for p in full_match.pairs:
        r = by_id[p.report_id]
        assert 0 <= p.annotation_index < len(r.annotations)
        assert 0 <= p.sentence_index < len(r.sentences)
        assert (p.report_id, p.annotation_index) not in seen
        seen.add((p.report_id, p.annotation_index))


def test_branch_accuracy_table(synth_corpus, full_match):
    table = branch_accuracy(full_match, synth_corpus.matches)
    assert sum(n for n, _ in table.values()) == len(synth_corpus.matches)
    assert table[1][1] > 0.95


def test_matching_is_deterministic(synth_corpus, synth_table, synth_encoder, full_match):
    again = match_corpus(synth_corpus.reports, synth_corpus.synonyms, synth_table, synth_encoder, MatcherConfig())
    assert again.pairs == full_match.pairs and again.branch_of == full_match.branch_of


CHAINS = [
    ("n-gram matching", "k-most-similar", "k-most-similar + term-synonyms", "rule-based"),
    ("n-gram matching", "n-gram matching + term-synonyms", "k-most-similar + term-synonyms"),
]


@pytest.mark.parametrize("chain", CHAINS)
def test_more_sources_never_resolve_fewer(synth_corpus, synth_table, chain):
    reports = synth_corpus.reports[:300]
    resolved = []
    for name in chain:
        res = match_corpus(reports, synth_corpus.synonyms, synth_table, None, ABLATIONS[name])
        resolved.append({k for k, b in res.branch_of.items() if b in (1, 2, 3)})
    for a, b in zip(resolved, resolved[1:]):
        assert a <= b


def test_literal_only_corpus():
    # Literal containment guarantees the heading is found; n-gram matching is
    # then exact. Embedding neighbours can outvote a literal hit, so the full
    # matcher is only asserted against its measured value (0.983).
    sc = generate(SynthConfig(seed=0, n_reports=500, synonym_fraction=0, stem_fraction=0,
                              neighbor_fraction=0, paraphrase_fraction=0))
    ngram = match_corpus(sc.reports, sc.synonyms, None, None, ABLATIONS["n-gram matching"])
    assert evaluate_matching(ngram.pairs, sc.matches) == 1.0
    assert ngram.branch_counts[3] == 0
    t = train_embeddings([s.tokens for r in sc.reports for s in r.sentences], EmbeddingConfig(seed=0))
    full = match_corpus(sc.reports, sc.synonyms, t, None, ABLATIONS["rule-based"])
    assert evaluate_matching(full.pairs, sc.matches) == pytest.approx(0.983, abs=0.005)
