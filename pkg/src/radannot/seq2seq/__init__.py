"""Sentence-level pointer-generator annotation model."""

from .decode import DecodeHypothesis, annotate_report, annotate_sentences, beam_search, decode_tokens, greedy_decode
from .io import load_model, read_annotations, save_model, write_annotations
from .model import (
    Batch,
    ModelDims,
    PointerGenModel,
    attend,
    encode,
    final_distribution,
    forward_backward,
    init_params,
    loss,
    make_batch,
)
from .train import (
    TrainConfig,
    TrainResult,
    build_vocab,
    evaluate_loss,
    make_examples,
    paragraph_pairs,
    sentence_pairs,
    train,
)
from .vocab import (
    ANNSEP,
    EOS,
    PAD,
    SLASH,
    SOS,
    SPECIALS,
    UNK,
    Vocab,
    build_targets,
    encode_example,
    normalize_annotation,
    render_annotations,
)
