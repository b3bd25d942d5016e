# %% [markdown]
# Sentence-annotation matching on a synthetic corpus.
# Each annotation is assigned to the sentence it describes; the synthetic
# generator knows the true sentence, so accuracy can be measured directly.

# %%
from radannot.embed import (
    EmbeddingConfig,
    SentenceEncoder,
    calibrate_threshold,
    make_encoder_pairs,
    most_similar,
    train_embeddings,
)
from radannot.matcher import ABLATIONS, evaluate_matching, match_corpus, random_baseline_corpus
from radannot.synth import SynthConfig, generate

corpus = generate(SynthConfig(seed=0, n_reports=300))
print(corpus.stats.format_table())

# %%
r = corpus.reports[0]
for s in r.sentences:
    print(s.index, " ".join(s.tokens))
for i, a in enumerate(r.annotations):
    print("annotation", i, a.raw)

# %% [markdown]
# Subword skip-gram vectors give the k-most-similar candidates and the
# sentence encoder used when no rule fires.

# %%
table = train_embeddings([s.tokens for r in corpus.reports for s in r.sentences], EmbeddingConfig(seed=0))
print(most_similar(table, "opacity", 5))

calib = corpus.reports[:60]
ids = {r.id for r in calib}
encoder = SentenceEncoder(table)
calibrate_threshold(encoder, make_encoder_pairs(calib, [m for m in corpus.matches if m.report_id in ids], 0))
print("encoder threshold", round(encoder.threshold, 3))

# %%
print("baseline", round(evaluate_matching(random_baseline_corpus(corpus.reports, 0), corpus.matches), 4))
for name, cfg in ABLATIONS.items():
    if cfg is None:
        continue
    res = match_corpus(corpus.reports, corpus.synonyms, table, encoder if cfg.use_encoder_fallback else None, cfg)
    print(name, round(evaluate_matching(res.pairs, corpus.matches), 4), "branches", res.branch_counts)
