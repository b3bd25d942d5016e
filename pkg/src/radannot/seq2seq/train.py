"""Training data assembly and the Adam training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import BadConfig, EmptyTrainingSet, NumericalError
from .model import ModelDims, PointerGenModel, forward_backward, make_batch
from .vocab import Example, Vocab, build_targets, encode_example

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 16
    grad_clip_norm: float = 5.0
    beam_size: int = 5
    max_decode_len: int = 40
    epochs: int = 30
    seed: int = 0
    min_token_freq: int = 1
    emb_dim: int = 100
    enc_hidden: int = 256
    dec_hidden: int = 512
    enc_layers: int = 2
    paragraph_level: bool = False
    stop_loss: float = 0.0  # stop once the epoch training loss falls below this; 0 disables
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        for name in ("learning_rate", "batch_size", "grad_clip_norm", "beam_size", "max_decode_len",
                     "epochs", "min_token_freq", "emb_dim", "enc_hidden", "dec_hidden", "enc_layers"):
            if getattr(self, name) <= 0:
                raise BadConfig(f"{name} must be positive")
        if self.stop_loss < 0:
            raise BadConfig("stop_loss must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def sentence_pairs(reports, matches) -> List[Tuple[Tuple[str, ...], List[str]]]:
    """(source tokens, target tokens) per sentence; unannotated sentences target EOS."""
    hosted: Dict[Tuple[str, int], List[int]] = {}
    for m in matches:
        if m.label == 1 and m.sentence_index is not None:
            hosted.setdefault((m.report_id, m.sentence_index), []).append(m.annotation_index)
    out = []
    for r in reports:
        for s in r.sentences:
            anns = [r.annotations[a] for a in sorted(hosted.get((r.id, s.index), []))]
            out.append((s.tokens, build_targets(anns)))
    return out


def paragraph_pairs(reports, matches) -> List[Tuple[Tuple[str, ...], List[str]]]:
    """Whole findings paragraph -> all annotations ordered by their sentence."""
    where = {(m.report_id, m.annotation_index): m.sentence_index for m in matches if m.label == 1}
    out = []
    for r in reports:
        if not r.sentences:
            continue
        src = tuple(t for s in r.sentences for t in s.tokens)
        order = sorted(range(len(r.annotations)),
                       key=lambda a: (where.get((r.id, a), len(r.sentences)), a))
        out.append((src, build_targets([r.annotations[a] for a in order])))
    return out


def build_vocab(pairs, min_freq: int = 1) -> Vocab:
    return Vocab.build([list(src) + list(tgt) for src, tgt in pairs], min_freq)


def make_examples(vocab: Vocab, pairs) -> List[Example]:
    return [encode_example(vocab, src, tgt) for src, tgt in pairs if len(src) > 0]


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_global_norm(grads, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if not np.isfinite(norm):
        raise NumericalError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def evaluate_loss(model: PointerGenModel, examples: Sequence[Example], batch_size: int = 16) -> float:
    """Token-weighted mean NLL over ``examples``."""
    total, n = 0.0, 0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        batch = make_batch(chunk, model.dims.vocab_size)
        k = batch.tgt_mask.sum()
        total += model.loss(batch) * k
        n += k
    return total / n if n else float("nan")


@dataclass
class TrainResult:
    model: PointerGenModel
    train_losses: List[float]
    val_losses: List[float]
    best_epoch: int


def train(train_pairs, config: TrainConfig = TrainConfig(), val_pairs=None, vocab: Optional[Vocab] = None,
          embeddings=None, model: Optional[PointerGenModel] = None, callback=None) -> TrainResult:
    """Fit a pointer-generator on (source tokens, target tokens) pairs.

    Parameters from the epoch with the lowest validation loss are kept (the
    training loss stands in when no validation pairs are given).
    ``embeddings`` is an optional EmbeddingTable used to initialise word
    vectors.
    """
    config.validate()
    if not train_pairs:
        raise EmptyTrainingSet("no training pairs")
    if model is None:
        vocab = vocab or build_vocab(train_pairs, config.min_token_freq)
        init = None
        if embeddings is not None:
            if embeddings.dim != config.emb_dim:
                raise BadConfig(f"embedding dim {embeddings.dim} != emb_dim {config.emb_dim}")
            init = np.stack([embeddings.vector(t) for t in vocab.itos]).astype(np.float64)
        dims = ModelDims(len(vocab), config.emb_dim, config.enc_hidden, config.dec_hidden, config.enc_layers)
        model = PointerGenModel(vocab, dims, seed=config.seed, embeddings=init)
    vocab = model.vocab
    examples = make_examples(vocab, train_pairs)
    if not examples:
        raise EmptyTrainingSet("all training sources are empty")
    val_examples = make_examples(vocab, val_pairs) if val_pairs else []

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    train_losses, val_losses = [], []
    best = (np.inf, -1, None)
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        total, n = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            chunk = [examples[j] for j in order[i : i + config.batch_size]]
            batch = make_batch(chunk, model.dims.vocab_size)
            loss, grads = forward_backward(model.params, model.dims, batch)
            clip_global_norm(grads, config.grad_clip_norm)
            opt.step(model.params, grads)
            k = batch.tgt_mask.sum()
            total += loss * k
            n += k
        train_losses.append(total / n)
        monitor = evaluate_loss(model, val_examples, config.batch_size) if val_examples else train_losses[-1]
        val_losses.append(monitor)
        log.info("epoch %d train %.4f val %.4f", epoch + 1, train_losses[-1], monitor)
        if monitor < best[0]:
            best = (monitor, epoch, {k: v.copy() for k, v in model.params.items()})
        if callback is not None:
            callback(epoch, train_losses[-1], monitor)
        if train_losses[-1] < config.stop_loss:
            break
    model.params = best[2]
    return TrainResult(model, train_losses, val_losses, best[1])
