import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radannot.corpus import report_from_record
from radannot.embed import (
    EmbeddingConfig,
    EmbeddingTable,
    LabeledPair,
    SentenceEncoder,
    _fnv1a,
    calibrate_threshold,
    char_ngrams,
    cosine,
    embed_sentence,
    make_encoder_pairs,
    most_similar,
    threshold_accuracy,
    train_embeddings,
)
from radannot.errors import DegenerateLabels, DimensionMismatch, EmptyCorpus, EmptySentence
from radannot.matcher import MatchedPair

SMALL = EmbeddingConfig(dim=20, epochs=10, buckets=50_000, seed=0)


def test_fnv1a_reference_values():
    # published 32-bit FNV-1a test vectors
    assert _fnv1a(b"") == 0x811C9DC5
    assert _fnv1a(b"a") == 0xE40C292C
    assert _fnv1a(b"foobar") == 0xBF9CF968


def test_char_ngrams_use_boundary_markers():
    grams = char_ngrams("copd", 3, 6)
    assert "<co" in grams and "pd>" in grams and "<copd>" in grams
    assert all(3 <= len(g) <= 6 for g in grams)


def _cooccurrence_corpus():
    rng = np.random.default_rng(0)
    fill = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta"]
    streams = []
    for _ in range(300):
        streams.append(["patient", "copd", "emphysema", "history"] + list(rng.choice(fill, 3)))
        streams.append(["chair", "table", "lamp"] + list(rng.choice(fill, 3)))
    return streams


@pytest.fixture(scope="module")
def cooc_table():
    return train_embeddings(_cooccurrence_corpus(), SMALL)


def test_cooccurrence_defines_neighbourhood(cooc_table):
    t = cooc_table
    assert cosine(t.vector("copd"), t.vector("emphysema")) > cosine(t.vector("copd"), t.vector("table"))


def test_dimension_and_finiteness(synth_table):
    assert synth_table.word_vectors.shape[1] == 100
    assert np.isfinite(synth_table.word_vectors).all()
    assert synth_table.vector("unseenword").shape == (100,)


def test_oov_word_from_subwords(synth_table):
    v = synth_table.vector("copdd")
    assert "copdd" not in synth_table and np.isfinite(v).all()
    # measured on the seed-0 synthetic corpus: 0.980
    c = cosine(v, synth_table.vector("copd"))
    assert c > 0.5
    assert c == pytest.approx(0.980, abs=0.01)


def test_oov_without_known_buckets_is_zero():
    t = EmbeddingTable.from_vectors(["a"], np.ones((1, 3)))
    assert not t.vector("zzz").any()


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        train_embeddings([[], []], SMALL)


def test_training_is_deterministic():
    a = train_embeddings(_cooccurrence_corpus()[:100], SMALL)
    b = train_embeddings(_cooccurrence_corpus()[:100], SMALL)
    assert a.words == b.words
    assert np.array_equal(a.word_vectors, b.word_vectors)
    assert np.array_equal(a.bucket_vectors, b.bucket_vectors)


def test_save_load_roundtrip(tmp_path, cooc_table):
    path = tmp_path / "e.bin"
    cooc_table.save(path)
    back = EmbeddingTable.load(path)
    assert back.words == cooc_table.words and back.config == cooc_table.config
    assert np.array_equal(back.word_vectors, cooc_table.word_vectors)
    assert np.array_equal(back.vector("copdd"), cooc_table.vector("copdd"))
    data = path.read_bytes()
    assert data[:6] == b"RADEMB"


def test_most_similar_rules():
    words = ["a", "b", "c", "d"]
    vecs = np.array([[1, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    t = EmbeddingTable.from_vectors(words, vecs)
    res = most_similar(t, "a", 10)
    assert len(res) == 3 and res[0] == ("b", pytest.approx(1.0))
    assert "a" not in [w for w, _ in res]
    sims = [s for _, s in res]
    assert sims == sorted(sims, reverse=True)


def test_most_similar_ties_lexicographic():
    t = EmbeddingTable.from_vectors(["q", "z", "y", "x"], np.array([[1, 0], [1, 0], [1, 0], [1, 0]]))
    assert [w for w, _ in most_similar(t, "q", 3)] == ["x", "y", "z"]


def test_cosine_cases():
    v = np.array([1.0, 2.0, 3.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0]), np.array([0, 1.0])) == 0.0
    assert cosine(v, -v) == pytest.approx(-1.0)
    assert cosine(v, np.zeros(3)) == 0.0
    with pytest.raises(DimensionMismatch):
        cosine(v, np.ones(2))


@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=6), st.randoms())
def test_embed_sentence_mean_properties(tokens, rnd):
    t = EmbeddingTable.from_vectors(["a", "b", "c"], np.array([[1, 2], [3, -1], [0.5, 0.5]]))
    enc = SentenceEncoder(t)
    e = embed_sentence(enc, tokens)
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    assert np.allclose(e, embed_sentence(enc, shuffled))
    assert np.allclose(e, embed_sentence(enc, tokens + tokens))
    assert e.shape == (2,)


def test_embed_sentence_single_and_empty():
    t = EmbeddingTable.from_vectors(["a"], np.array([[1.0, 2.0]]))
    enc = SentenceEncoder(t)
    assert np.allclose(embed_sentence(enc, ["a"]), [1.0, 2.0])
    with pytest.raises(EmptySentence):
        embed_sentence(enc, [])


class _FixedEncoder(SentenceEncoder):
    """Similarity read from a lookup on the sentence tokens."""

    def __init__(self, scores):
        super().__init__(table=None)
        self.scores = scores

    def similarity(self, a, b):
        return self.scores[a]


def _pairs(scored):
    return [LabeledPair("r", (str(i),), ("x",), lab) for i, (_, lab) in enumerate(scored)]


def _enc(scored):
    return _FixedEncoder({(str(i),): s for i, (s, _) in enumerate(scored)})


def test_calibrate_separable():
    scored = [(0.95, 1), (0.9, 1), (0.1, 0), (0.05, 0)]
    enc = _enc(scored)
    t = calibrate_threshold(enc, _pairs(scored))
    assert 0.1 < t < 0.9 and enc.threshold == t
    assert threshold_accuracy(enc, _pairs(scored)) == 1.0


def test_calibrate_inseparable_tie_rule():
    scored = [(0.5, 1), (0.5, 0)]
    enc = _enc(scored)
    t = calibrate_threshold(enc, _pairs(scored))
    # both cuts give accuracy 0.5; the larger one is kept
    assert t == 0.5
    assert threshold_accuracy(enc, _pairs(scored)) == 0.5


def test_calibrate_degenerate():
    scored = [(0.5, 1), (0.7, 1)]
    with pytest.raises(DegenerateLabels):
        calibrate_threshold(_enc(scored), _pairs(scored))


@given(st.lists(st.tuples(st.floats(-1, 1), st.integers(0, 1)), min_size=2, max_size=30))
def test_calibrate_beats_trivial_classifiers(scored):
    labels = [l for _, l in scored]
    if len(set(labels)) < 2:
        return
    enc = _enc(scored)
    calibrate_threshold(enc, _pairs(scored))
    acc = threshold_accuracy(enc, _pairs(scored))
    base = max(np.mean(labels), 1 - np.mean(labels))
    assert acc >= base - 1e-12
    # brute-force oracle over every cut
    cuts = sorted({s for s, _ in scored}) + [min(s for s, _ in scored) - 1]
    best = max(np.mean([(s > c) == l for s, l in scored]) for c in cuts)
    assert acc == pytest.approx(best)


def test_encoder_pairs():
    r = report_from_record({
        "id": "r1",
        "findings": "Low lung volumes. There is no pneumothorax or pleural effusion. No acute disease.",
        "annotations": ["Lung/hypoinflation", "Opacity/lung/base/left/mild"],
    })
    pairs = make_encoder_pairs([r], [MatchedPair("r1", 0, 0, 1, "manual")], seed=0)
    pos = [p for p in pairs if p.label == 1]
    neg = [p for p in pairs if p.label == 0]
    assert len(pos) == 1 and pos[0].sentence_tokens == ("low", "lung", "volumes")
    assert pos[0].annotation_tokens == ("lung", "hypoinflation")
    assert len(neg) == 2
    assert all((p.sentence_tokens, p.annotation_tokens) != (pos[0].sentence_tokens, pos[0].annotation_tokens)
               for p in neg)
    assert make_encoder_pairs([r], [MatchedPair("r1", 0, 0, 1, "manual")], seed=0) == pairs


def test_encoder_separates_synthetic_pairs(synth_corpus, synth_encoder):
    held = synth_corpus.reports[200:400]
    ids = {r.id for r in held}
    pairs = make_encoder_pairs(held, [m for m in synth_corpus.matches if m.report_id in ids], seed=1)
    # measured on seed 0: 0.941 held out, threshold 0.735
    acc = threshold_accuracy(synth_encoder, pairs)
    assert acc >= 0.9
    assert acc == pytest.approx(0.941, abs=0.01)
    assert synth_encoder.threshold == pytest.approx(0.735, abs=0.01)
