"""Sentence-level annotation of chest X-ray reports.

Submodules: ``corpus`` (parsing, preprocessing, splits, statistics),
``textproc`` (tokens, n-grams, Porter stems), ``embed`` (subword skip-gram
vectors and the sentence encoder), ``matcher`` (rule-based
sentence-annotation matching), ``seq2seq`` (pointer-generator annotator),
``metrics`` (BLEU, METEOR, ROUGE-L), ``synth`` (synthetic corpus) and
``cli``.
"""

__version__ = "0.1.0"
