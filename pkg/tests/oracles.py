"""Independent reference computations used by the tests.

The forward oracle walks one example with scalar Python loops, without
batching, masking or caching, so it shares no code with the vectorised
model beyond the parameter dictionary.
"""

import math

import numpy as np


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _matvec(W, x):
    return [sum(W[r][k] * x[k] for k in range(len(x))) for r in range(len(W))]


def _lstm(W, b, x, h, c):
    z = [zi + bi for zi, bi in zip(_matvec(W, list(x) + list(h)), b)]
    n = len(h)
    i = [_sig(v) for v in z[:n]]
    f = [_sig(v) for v in z[n:2 * n]]
    g = [math.tanh(v) for v in z[2 * n:3 * n]]
    o = [_sig(v) for v in z[3 * n:]]
    c2 = [f[k] * c[k] + i[k] * g[k] for k in range(n)]
    h2 = [o[k] * math.tanh(c2[k]) for k in range(n)]
    return h2, c2


def reference_nll(params, n_layers, src_base, src_ext, target_ext, vocab_size, sos=1, unk=3):
    """Mean -log P(gold) for one (source, target) pair."""
    P = {k: np.asarray(v).tolist() for k, v in params.items()}
    H = len(P["enc0f_b"]) // 4
    xs = [P["emb"][i] for i in src_base]
    L = len(xs)
    for layer in range(n_layers):
        hf, cf = [0.0] * H, [0.0] * H
        fwd = []
        for t in range(L):
            hf, cf = _lstm(P[f"enc{layer}f_W"], P[f"enc{layer}f_b"], xs[t], hf, cf)
            fwd.append(hf)
        hb, cb = [0.0] * H, [0.0] * H
        bwd = [None] * L
        for t in reversed(range(L)):
            hb, cb = _lstm(P[f"enc{layer}b_W"], P[f"enc{layer}b_b"], xs[t], hb, cb)
            bwd[t] = hb
        xs = [fwd[t] + bwd[t] for t in range(L)]
    enc = xs
    fh, fc = hf + hb, cf + cb
    s = [a + b for a, b in zip(_matvec(P["bridge_h_W"], fh), P["bridge_h_b"])]
    c = [a + b for a, b in zip(_matvec(P["bridge_c_W"], fc), P["bridge_c_b"])]
    prev = sos
    total = 0.0
    for gold in target_ext:
        x = P["emb"][prev if prev < vocab_size else unk]
        s, c = _lstm(P["dec_W"], P["dec_b"], x, s, c)
        ws = _matvec(P["attn_Ws"], s)
        scores = []
        for h in enc:
            wh = _matvec(P["attn_Wh"], h)
            scores.append(sum(v * math.tanh(wh[k] + ws[k] + P["attn_b"][k]) for k, v in enumerate(P["attn_v"])))
        m = max(scores)
        e = [math.exp(v - m) for v in scores]
        a = [v / sum(e) for v in e]
        ctx = [sum(a[i] * enc[i][d] for i in range(L)) for d in range(len(enc[0]))]
        hid = [u + v for u, v in zip(_matvec(P["out_W1"], s + ctx), P["out_b1"])]
        logits = [u + v for u, v in zip(_matvec(P["out_W2"], hid), P["out_b2"])]
        m = max(logits)
        e = [math.exp(v - m) for v in logits]
        pv = [v / sum(e) for v in e]
        u = (sum(p * q for p, q in zip(P["pgen_wc"], ctx)) + sum(p * q for p, q in zip(P["pgen_ws"], s))
             + sum(p * q for p, q in zip(P["pgen_wx"], x)) + P["pgen_b"][0])
        pg = _sig(u)
        prob = (pg * pv[gold] if gold < vocab_size else 0.0) + (1 - pg) * sum(
            a[i] for i in range(L) if src_ext[i] == gold)
        total += -math.log(max(prob, 1e-12))
        prev = gold
    return total / len(target_ext)


def finite_difference_check(params, loss_fn, grads, h=1e-5):
    """Per parameter group ||analytic - numeric|| / (||analytic|| + ||numeric||)."""
    out = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = loss_fn()
            p[idx] = old - h
            lm = loss_fn()
            p[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        denom = np.linalg.norm(num) + np.linalg.norm(grads[name])
        out[name] = 0.0 if denom == 0 else float(np.linalg.norm(num - grads[name]) / denom)
    return out
