"""Greedy and beam-search decoding, and report-level annotation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import EmptySource
from .model import _bridge, decoder_step, encode_batch, final_distribution
from .vocab import EOS, SOS, UNK, decode_ids, encode_example, render_annotations


@dataclass
class DecodeHypothesis:
    tokens: List[int]  # extended-vocabulary ids, without the leading SOS
    log_prob: float
    state: Tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS


class _Session:
    """Encoder output for one source, reused across decoder steps."""

    def __init__(self, model, source_tokens: Sequence[str]):
        if len(source_tokens) == 0:
            raise EmptySource("cannot decode an empty source")
        self.model = model
        self.example = encode_example(model.vocab, source_tokens)
        p = model.params
        ids = self.example.src_ids[None]
        self.mask = np.ones((1, ids.shape[1]))
        self.enc_out, fh, fc, _ = encode_batch(p, model.dims, ids, self.mask)
        self.enc_feat = self.enc_out @ p["attn_Wh"].T
        self.s0, self.c0 = _bridge(p, fh, fc)
        self.n_ext = len(self.example.oovs)
        self.V = model.dims.vocab_size

    def step(self, prev_ids: Sequence[int], s, c):
        """Log-probabilities over the extended vocabulary for K live hypotheses."""
        K = len(prev_ids)
        x = np.array([i if i < self.V else UNK for i in prev_ids], dtype=np.int64)
        enc_out = np.repeat(self.enc_out, K, axis=0)
        enc_feat = np.repeat(self.enc_feat, K, axis=0)
        mask = np.repeat(self.mask, K, axis=0)
        p_vocab, a, p_gen, s, c, _ = decoder_step(self.model.params, x, s, c, enc_out, enc_feat, mask)
        src_ext = np.repeat(self.example.src_ext[None], K, axis=0)
        dist = final_distribution(p_vocab, a, p_gen, src_ext, self.n_ext)
        with np.errstate(divide="ignore"):
            return np.log(dist), s, c


def greedy_decode(model, source_tokens: Sequence[str], max_len: int = 40) -> DecodeHypothesis:
    sess = _Session(model, source_tokens)
    s, c = sess.s0, sess.c0
    tokens, lp, prev = [], 0.0, SOS
    for _ in range(max_len):
        logp, s, c = sess.step([prev], s, c)
        nxt = int(np.argmax(logp[0]))
        tokens.append(nxt)
        lp += float(logp[0, nxt])
        prev = nxt
        if nxt == EOS:
            break
    return DecodeHypothesis(tokens, lp, (s, c))


def beam_search(model, source_tokens: Sequence[str], beam_size: int = 5, max_len: int = 40) -> DecodeHypothesis:
    """Length-unnormalized beam search over the extended vocabulary.

    Each live hypothesis proposes its ``2 * beam_size`` best continuations
    and the best ``beam_size - finished`` of all candidates are kept.
    EOS-terminated candidates move to the finished pool, so the beam shrinks
    as hypotheses finish; search ends when ``beam_size`` have finished or
    after ``max_len`` steps. The best finished hypothesis is returned, or the
    best live one if none finished.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    sess = _Session(model, source_tokens)
    live = [DecodeHypothesis([], 0.0, (sess.s0[0], sess.c0[0]))]
    done: List[DecodeHypothesis] = []
    for _ in range(max_len):
        prev = [h.tokens[-1] if h.tokens else SOS for h in live]
        s = np.stack([h.state[0] for h in live])
        c = np.stack([h.state[1] for h in live])
        logp, s, c = sess.step(prev, s, c)
        n_top = min(2 * beam_size, logp.shape[1])
        cands = []
        for k, h in enumerate(live):
            top = np.argsort(-logp[k], kind="stable")[:n_top]
            for tok in top:
                cands.append((h.log_prob + float(logp[k, tok]), k, int(tok)))
        cands.sort(key=lambda x: (-x[0], x[1], x[2]))
        new_live = []
        for score, k, tok in cands[: beam_size - len(done)]:
            hyp = DecodeHypothesis(live[k].tokens + [tok], score, (s[k], c[k]))
            (done if tok == EOS else new_live).append(hyp)
        live = new_live
        if not live:
            break
    pool = done or live
    return max(pool, key=lambda h: h.log_prob)


def decode_tokens(model, source_tokens: Sequence[str], beam_size: int = 5, max_len: int = 40) -> List[str]:
    hyp = beam_search(model, source_tokens, beam_size, max_len)
    oovs = encode_example(model.vocab, source_tokens).oovs
    return decode_ids(model.vocab, hyp.tokens, oovs)


def annotate_sentences(model, sentences: Sequence[Sequence[str]], beam_size: int = 5, max_len: int = 40) -> List[str]:
    """Union of the annotations decoded for each sentence, first occurrence order."""
    seen, out = set(), []
    for toks in sentences:
        if not toks:
            continue
        for ann in render_annotations(decode_tokens(model, toks, beam_size, max_len)):
            if ann not in seen:
                seen.add(ann)
                out.append(ann)
    return out


def annotate_report(model, report, beam_size: int = 5, max_len: int = 40, paragraph: bool = False) -> List[str]:
    if paragraph:
        src = [t for s in report.sentences for t in s.tokens]
        return annotate_sentences(model, [src], beam_size, max_len)
    return annotate_sentences(model, [s.tokens for s in report.sentences], beam_size, max_len)
