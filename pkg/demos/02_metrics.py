# %% [markdown]
# Scoring generated annotations: BLEU-N with a term-count filter, METEOR
# (exact and stem stages) and ROUGE-L F1.

# %%
from radannot.metrics import EvalPair, bleu_n, evaluate, format_table, make_pair, meteor_details, rouge_l_f1

short = EvalPair("calcinosis lung hilum".split(), "calcinosis lung hilum lymph nodes".split())
print("BLEU-1 with brevity penalty", bleu_n([short], 1))

print("ROUGE-L", rouge_l_f1(EvalPair(["lung", "hypoinflation"], ["low", "lung", "volumes"])))
print(meteor_details(EvalPair(["scarring"], ["scar"])))

# %% [markdown]
# Annotations are flattened to tokens; the filter counts terms, so
# "lymph nodes" is one term but two tokens.

# %%
pairs = [
    make_pair(["Cardiomegaly/mild"], ["Cardiomegaly/mild"]),
    make_pair(["Opacity/lung/base/left"], ["Opacity/lung/base/right"]),
    make_pair(["Granuloma"], ["Calcified Granuloma/lung/upper lobe/right"]),
]
print(format_table([evaluate(pairs, "example", "report")]))
