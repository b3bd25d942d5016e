"""Pointer-generator network in plain numpy.

Architecture: word embeddings -> stacked bidirectional LSTM encoder -> linear
bridge to the decoder's initial state -> single-layer LSTM decoder with
additive attention. Each step mixes the vocabulary softmax with a copy
distribution given by the attention weights, using a learned generation
probability ``p_gen``. There is no coverage term.

Forward and backward passes are written out by hand and operate on padded
batches; ``forward_backward`` returns the mean token negative log-likelihood
and the gradient of every parameter.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import EmptySource, NumericalError
from .vocab import PAD, UNK

EPS = 1e-12


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    emb_dim: int = 100
    enc_hidden: int = 256
    dec_hidden: int = 512
    enc_layers: int = 2
    attn_dim: Optional[int] = None

    @property
    def attn(self) -> int:
        return self.attn_dim or self.dec_hidden

    def to_dict(self) -> dict:
        return asdict(self)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _masked_softmax(scores, mask):
    scores = np.where(mask > 0, scores, -np.inf)
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z) * (mask > 0)
    return e / e.sum(axis=-1, keepdims=True)


def param_shapes(d: ModelDims) -> Dict[str, Tuple[int, ...]]:
    H, D, E, A, V = d.enc_hidden, d.dec_hidden, d.emb_dim, d.attn, d.vocab_size
    shapes = {"emb": (V, E)}
    for layer in range(d.enc_layers):
        inp = E if layer == 0 else 2 * H
        for direction in "fb":
            shapes[f"enc{layer}{direction}_W"] = (4 * H, inp + H)
            shapes[f"enc{layer}{direction}_b"] = (4 * H,)
    shapes.update({
        "bridge_h_W": (D, 2 * H), "bridge_h_b": (D,),
        "bridge_c_W": (D, 2 * H), "bridge_c_b": (D,),
        "dec_W": (4 * D, E + D), "dec_b": (4 * D,),
        "attn_Wh": (A, 2 * H), "attn_Ws": (A, D), "attn_b": (A,), "attn_v": (A,),
        "out_W1": (D, D + 2 * H), "out_b1": (D,),
        "out_W2": (V, D), "out_b2": (V,),
        "pgen_wc": (2 * H,), "pgen_ws": (D,), "pgen_wx": (E,), "pgen_b": (1,),
    })
    return shapes


def init_params(dims: ModelDims, seed: int = 0, scale: float = 0.08,
                embeddings: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(dims).items():
        if name.endswith("_b") or name.endswith("_b1") or name.endswith("_b2"):
            p = np.zeros(shape)
        else:
            p = rng.uniform(-scale, scale, size=shape)
        params[name] = p
    # forget-gate bias 1
    for name in params:
        if name.startswith(("enc", "dec")) and name.endswith("_b"):
            n = params[name].shape[0] // 4
            params[name][n : 2 * n] = 1.0
    if embeddings is not None:
        params["emb"][: embeddings.shape[0]] = embeddings
    params["emb"][PAD] = 0.0
    return params


# --------------------------------------------------------------------------
# LSTM cell

def lstm_step(x, h, c, W, b):
    xh = np.concatenate([x, h], axis=1)
    z = xh @ W.T + b
    n = h.shape[1]
    i = sigmoid(z[:, :n])
    f = sigmoid(z[:, n : 2 * n])
    g = np.tanh(z[:, 2 * n : 3 * n])
    o = sigmoid(z[:, 3 * n :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, c, i, f, g, o, tc)


def lstm_step_back(dh, dc, cache, W, grads_W, grads_b):
    xh, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    di = dct * g
    dg = dct * i
    df = dct * c_prev
    dc_prev = dct * f
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=1)
    grads_W += dz.T @ xh
    grads_b += dz.sum(axis=0)
    dxh = dz @ W
    n = c_prev.shape[1]
    return dxh[:, :-n], dxh[:, -n:], dc_prev


# --------------------------------------------------------------------------
# Building blocks usable on their own

def attend(params, s, enc_out, mask=None, enc_feat=None):
    """Additive attention.

    ``s``: (B, D) decoder states, ``enc_out``: (B, L, 2H). Returns the
    attention weights (B, L) and the context vectors (B, 2H).
    """
    s = np.atleast_2d(s)
    if enc_out.ndim == 2:
        enc_out = enc_out[None]
    if mask is None:
        mask = np.ones(enc_out.shape[:2])
    if enc_feat is None:
        enc_feat = enc_out @ params["attn_Wh"].T
    dec_feat = s @ params["attn_Ws"].T + params["attn_b"]
    pre = np.tanh(enc_feat + dec_feat[:, None, :])
    scores = pre @ params["attn_v"]
    a = _masked_softmax(scores, mask)
    ctx = np.einsum("bl,bld->bd", a, enc_out)
    return a, ctx, pre


def final_distribution(p_vocab, attention, p_gen, src_ext, n_ext: Optional[int] = None):
    """Mix generation and copy distributions over the extended vocabulary.

    ``P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum_{i: src_i = w} a_i``;
    extended slots (ids >= vocabulary size) get no generation mass.
    Accepts a single example (1-d inputs) or a batch.
    """
    single = np.ndim(p_vocab) == 1
    p_vocab = np.atleast_2d(p_vocab)
    attention = np.atleast_2d(attention)
    src_ext = np.atleast_2d(src_ext)
    p_gen = np.asarray(p_gen, dtype=np.float64).reshape(-1, 1)
    B, V = p_vocab.shape
    if n_ext is None:
        n_ext = max(0, int(src_ext.max()) + 1 - V) if src_ext.size else 0
    out = np.zeros((B, V + n_ext))
    out[:, :V] = p_gen * p_vocab
    copy = (1.0 - p_gen) * attention
    rows = np.repeat(np.arange(B), src_ext.shape[1])
    np.add.at(out, (rows, src_ext.ravel()), copy.ravel())
    return out[0] if single else out


# --------------------------------------------------------------------------
# Encoder

def _run_direction(X, mask, W, b, H, reverse):
    B, L, _ = X.shape
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.zeros((B, L, H))
    caches = [None] * L
    steps = range(L - 1, -1, -1) if reverse else range(L)
    for t in steps:
        h_new, c_new, cache = lstm_step(X[:, t], h, c, W, b)
        m = mask[:, t, None]
        h = m * h_new + (1 - m) * h
        c = m * c_new + (1 - m) * c
        out[:, t] = h
        caches[t] = cache
    return out, h, c, caches


def _run_direction_back(dout, dh_final, dc_final, mask, caches, W, gW, gb, reverse, in_dim):
    B, L, H = dout.shape
    dX = np.zeros((B, L, in_dim))
    dh = dh_final.copy()
    dc = dc_final.copy()
    steps = range(L) if reverse else range(L - 1, -1, -1)
    for t in steps:
        m = mask[:, t, None]
        dh = dh + dout[:, t]
        dx, dh_prev, dc_prev = lstm_step_back(m * dh, m * dc, caches[t], W, gW, gb)
        dX[:, t] = dx
        dh = dh_prev + (1 - m) * dh
        dc = dc_prev + (1 - m) * dc
    return dX


def encode_batch(params, dims: ModelDims, src_ids, src_mask):
    X = params["emb"][src_ids]
    caches = {"emb_in": src_ids, "layers": []}
    H = dims.enc_hidden
    for layer in range(dims.enc_layers):
        of, hf, cf, cache_f = _run_direction(X, src_mask, params[f"enc{layer}f_W"], params[f"enc{layer}f_b"], H, False)
        ob, hb, cb, cache_b = _run_direction(X, src_mask, params[f"enc{layer}b_W"], params[f"enc{layer}b_b"], H, True)
        caches["layers"].append((X.shape[2], cache_f, cache_b))
        X = np.concatenate([of, ob], axis=2)
    final_h = np.concatenate([hf, hb], axis=1)
    final_c = np.concatenate([cf, cb], axis=1)
    return X, final_h, final_c, caches


def encode(model, source_ids) -> np.ndarray:
    """Encoder states (L, 2H) for one source sequence of base-vocabulary ids."""
    ids = np.asarray(source_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptySource("cannot encode an empty source")
    out, _, _, _ = encode_batch(model.params, model.dims, ids[None], np.ones((1, len(ids))))
    return out[0]


def _bridge(params, final_h, final_c):
    s0 = final_h @ params["bridge_h_W"].T + params["bridge_h_b"]
    c0 = final_c @ params["bridge_c_W"].T + params["bridge_c_b"]
    return s0, c0


# --------------------------------------------------------------------------
# Decoder step shared by training and inference

def decoder_step(params, x_ids, s, c, enc_out, enc_feat, src_mask):
    """One decoder step. Returns (p_vocab, attention, p_gen, s, c, cache)."""
    x = params["emb"][x_ids]
    s, c, lcache = lstm_step(x, s, c, params["dec_W"], params["dec_b"])
    a, ctx, pre = attend(params, s, enc_out, src_mask, enc_feat)
    sc = np.concatenate([s, ctx], axis=1)
    hid = sc @ params["out_W1"].T + params["out_b1"]
    p_vocab = _softmax(hid @ params["out_W2"].T + params["out_b2"])
    u = ctx @ params["pgen_wc"] + s @ params["pgen_ws"] + x @ params["pgen_wx"] + params["pgen_b"][0]
    p_gen = sigmoid(u)
    cache = (x_ids, x, lcache, s, a, ctx, pre, sc, hid, p_vocab, p_gen)
    return p_vocab, a, p_gen, s, c, cache


# --------------------------------------------------------------------------
# Batched loss + gradients

@dataclass
class Batch:
    src_ids: np.ndarray   # (B, L) base ids, PAD-padded
    src_ext: np.ndarray   # (B, L) extended ids
    src_mask: np.ndarray  # (B, L)
    dec_in: np.ndarray    # (B, T) base ids: SOS + target[:-1]
    target: np.ndarray    # (B, T) extended ids
    tgt_mask: np.ndarray  # (B, T)
    n_ext: int


def make_batch(examples, vocab_size: int) -> Batch:
    from .vocab import SOS

    B = len(examples)
    L = max(len(e.src_ids) for e in examples)
    T = max(len(e.tgt_ext) for e in examples)
    src_ids = np.full((B, L), PAD, dtype=np.int64)
    src_ext = np.full((B, L), PAD, dtype=np.int64)
    src_mask = np.zeros((B, L))
    dec_in = np.full((B, T), PAD, dtype=np.int64)
    target = np.full((B, T), PAD, dtype=np.int64)
    tgt_mask = np.zeros((B, T))
    for b, e in enumerate(examples):
        n = len(e.src_ids)
        if n == 0:
            raise EmptySource("example with empty source")
        src_ids[b, :n] = e.src_ids
        src_ext[b, :n] = e.src_ext
        src_mask[b, :n] = 1
        m = len(e.tgt_ext)
        target[b, :m] = e.tgt_ext
        tgt_mask[b, :m] = 1
        prev = np.concatenate([[SOS], e.tgt_ext[:-1]])
        dec_in[b, :m] = np.where(prev >= vocab_size, UNK, prev)
    n_ext = max((len(e.oovs) for e in examples), default=0)
    return Batch(src_ids, src_ext, src_mask, dec_in, target, tgt_mask, n_ext)


def forward_backward(params, dims: ModelDims, batch: Batch, need_grads: bool = True):
    """Mean masked NLL of the gold tokens and (optionally) its gradients."""
    V = dims.vocab_size
    enc_out, final_h, final_c, enc_cache = encode_batch(params, dims, batch.src_ids, batch.src_mask)
    enc_feat = enc_out @ params["attn_Wh"].T
    s, c = _bridge(params, final_h, final_c)
    B, T = batch.target.shape
    n_tok = batch.tgt_mask.sum()
    rows = np.arange(B)
    steps = []
    total = 0.0
    for t in range(T):
        p_vocab, a, p_gen, s, c, cache = decoder_step(params, batch.dec_in[:, t], s, c, enc_out, enc_feat, batch.src_mask)
        gold = batch.target[:, t]
        in_vocab = gold < V
        pv_gold = np.where(in_vocab, p_vocab[rows, np.minimum(gold, V - 1)], 0.0)
        match = (batch.src_ext == gold[:, None]) * batch.src_mask
        copy = (a * match).sum(axis=1)
        prob = p_gen * pv_gold + (1.0 - p_gen) * copy
        clamped = prob <= EPS
        nll = -np.log(np.maximum(prob, EPS))
        total += float((nll * batch.tgt_mask[:, t]).sum())
        steps.append((cache, gold, in_vocab, pv_gold, match, copy, prob, clamped))
    loss = total / n_tok
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}")
    if not need_grads:
        return loss, None

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    d_enc_out = np.zeros_like(enc_out)
    d_enc_feat = np.zeros_like(enc_feat)
    ds = np.zeros_like(s)
    dc = np.zeros_like(c)
    for t in range(T - 1, -1, -1):
        cache, gold, in_vocab, pv_gold, match, copy, prob, clamped = steps[t]
        x_ids, x, lcache, s_t, a, ctx, pre, sc, hid, p_vocab, p_gen = cache
        dP = np.where(clamped, 0.0, -batch.tgt_mask[:, t] / (n_tok * np.maximum(prob, EPS)))
        d_pgen = dP * (pv_gold - copy)
        d_pvg = dP * p_gen * in_vocab
        dlogits = -p_vocab * (d_pvg * pv_gold)[:, None]
        dlogits[rows, np.minimum(gold, V - 1)] += d_pvg * pv_gold
        da = (dP * (1.0 - p_gen))[:, None] * match

        grads["out_W2"] += dlogits.T @ hid
        grads["out_b2"] += dlogits.sum(axis=0)
        dhid = dlogits @ params["out_W2"]
        grads["out_W1"] += dhid.T @ sc
        grads["out_b1"] += dhid.sum(axis=0)
        dsc = dhid @ params["out_W1"]
        D = s_t.shape[1]
        ds_t = dsc[:, :D] + ds
        dctx = dsc[:, D:]

        du = d_pgen * p_gen * (1.0 - p_gen)
        grads["pgen_wc"] += du @ ctx
        grads["pgen_ws"] += du @ s_t
        grads["pgen_wx"] += du @ x
        grads["pgen_b"][0] += du.sum()
        dctx = dctx + du[:, None] * params["pgen_wc"]
        ds_t = ds_t + du[:, None] * params["pgen_ws"]
        dx = du[:, None] * params["pgen_wx"]

        da = da + np.einsum("bd,bld->bl", dctx, enc_out)
        d_enc_out += a[:, :, None] * dctx[:, None, :]
        de = a * (da - (a * da).sum(axis=1, keepdims=True))
        grads["attn_v"] += np.einsum("bl,bla->a", de, pre)
        dz = de[:, :, None] * params["attn_v"] * (1.0 - pre * pre)
        d_enc_feat += dz
        d_dec_feat = dz.sum(axis=1)
        grads["attn_Ws"] += d_dec_feat.T @ s_t
        grads["attn_b"] += d_dec_feat.sum(axis=0)
        ds_t = ds_t + d_dec_feat @ params["attn_Ws"]

        dxl, ds, dc = lstm_step_back(ds_t, dc, lcache, params["dec_W"], grads["dec_W"], grads["dec_b"])
        np.add.at(grads["emb"], x_ids, dxl + dx)

    # bridge
    grads["bridge_h_W"] += ds.T @ final_h
    grads["bridge_h_b"] += ds.sum(axis=0)
    grads["bridge_c_W"] += dc.T @ final_c
    grads["bridge_c_b"] += dc.sum(axis=0)
    d_final_h = ds @ params["bridge_h_W"]
    d_final_c = dc @ params["bridge_c_W"]

    grads["attn_Wh"] += np.einsum("bla,bld->ad", d_enc_feat, enc_out)
    d_enc_out += d_enc_feat @ params["attn_Wh"]

    H = dims.enc_hidden
    dX = d_enc_out
    for layer in range(dims.enc_layers - 1, -1, -1):
        in_dim, cache_f, cache_b = enc_cache["layers"][layer]
        last = layer == dims.enc_layers - 1
        zeros = np.zeros((B, H))
        dhf, dhb = (d_final_h[:, :H], d_final_h[:, H:]) if last else (zeros, zeros)
        dcf, dcb = (d_final_c[:, :H], d_final_c[:, H:]) if last else (zeros, zeros)
        dXf = _run_direction_back(dX[:, :, :H], dhf, dcf, batch.src_mask, cache_f, params[f"enc{layer}f_W"],
                                  grads[f"enc{layer}f_W"], grads[f"enc{layer}f_b"], False, in_dim)
        dXb = _run_direction_back(dX[:, :, H:], dhb, dcb, batch.src_mask, cache_b, params[f"enc{layer}b_W"],
                                  grads[f"enc{layer}b_W"], grads[f"enc{layer}b_b"], True, in_dim)
        dX = dXf + dXb
    np.add.at(grads["emb"], batch.src_ids, dX)
    grads["emb"][PAD] = 0.0
    return loss, grads


class PointerGenModel:
    """Parameters plus the vocabulary they are defined over."""

    def __init__(self, vocab, dims: Optional[ModelDims] = None, seed: int = 0,
                 params: Optional[Dict[str, np.ndarray]] = None, embeddings=None, **dim_kw):
        self.vocab = vocab
        self.dims = dims or ModelDims(vocab_size=len(vocab), **dim_kw)
        if self.dims.vocab_size != len(vocab):
            raise ValueError("dims.vocab_size does not match the vocabulary")
        self.params = params if params is not None else init_params(self.dims, seed, embeddings=embeddings)

    def loss(self, batch: Batch) -> float:
        return forward_backward(self.params, self.dims, batch, need_grads=False)[0]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def loss(model: PointerGenModel, batch: Batch) -> float:
    """Mean negative log-likelihood of the gold tokens in ``batch``."""
    return model.loss(batch)
