import pytest

from radannot.embed import EmbeddingConfig, SentenceEncoder, calibrate_threshold, make_encoder_pairs, train_embeddings
from radannot.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def synth_corpus():
    return generate(SynthConfig(seed=0, n_reports=1000))


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(seed=1, n_reports=40))


@pytest.fixture(scope="session")
def synth_table(synth_corpus):
    streams = [s.tokens for r in synth_corpus.reports for s in r.sentences]
    return train_embeddings(streams, EmbeddingConfig(seed=0))


@pytest.fixture(scope="session")
def synth_encoder(synth_corpus, synth_table):
    calib = synth_corpus.reports[:200]
    ids = {r.id for r in calib}
    enc = SentenceEncoder(synth_table)
    calibrate_threshold(enc, make_encoder_pairs(calib, [m for m in synth_corpus.matches if m.report_id in ids], 0))
    return enc
