# %% [markdown]
# A small pointer-generator trained on matched sentences, then used to
# annotate whole reports by taking the union over sentences.

# %%
from radannot.seq2seq import TrainConfig, annotate_report, beam_search, greedy_decode, normalize_annotation
from radannot.seq2seq import sentence_pairs, train
from radannot.synth import SynthConfig, generate

corpus = generate(SynthConfig(seed=2, n_reports=4))
pairs = sentence_pairs(corpus.reports, corpus.matches)
for src, tgt in pairs[:4]:
    print(" ".join(src), "->", " ".join(tgt))

# %%
cfg = TrainConfig(emb_dim=24, enc_hidden=24, dec_hidden=48, learning_rate=0.005, epochs=400, stop_loss=0.005)
res = train(pairs, cfg)
print("epochs", len(res.train_losses), "final loss", round(res.train_losses[-1], 5))

# %%
for r in corpus.reports:
    print(r.id, annotate_report(res.model, r), [normalize_annotation(a.raw) for a in r.annotations])

# %% [markdown]
# Copying: an unseen word can only come from the source through attention.

# %%
src = ["small", "pneumatocele", "in", "the", "right", "lung"]
print(greedy_decode(res.model, src).tokens, beam_search(res.model, src, 5).tokens)
