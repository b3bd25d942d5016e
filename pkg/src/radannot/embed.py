"""Subword-aware skip-gram embeddings and a mean-pooling sentence encoder.

Words are represented fastText-style: a word row plus one row per hashed
character n-gram of ``<word>``. Out-of-vocabulary words are composed from
their n-gram rows alone, so every string gets a vector.

Training is single threaded and fully determined by ``EmbeddingConfig.seed``.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch, EmptyCorpus, EmptySentence, MalformedRecord

__all__ = [
    "EmbeddingConfig",
    "EmbeddingTable",
    "SentenceEncoder",
    "LabeledPair",
    "train_embeddings",
    "most_similar",
    "embed_sentence",
    "cosine",
    "calibrate_threshold",
    "threshold_accuracy",
    "make_encoder_pairs",
]

MAGIC = b"RADEMB\x00\x00"
VERSION = 1


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 100
    window: int = 5
    negative: int = 5
    epochs: int = 5
    min_count: int = 1
    min_n: int = 3
    max_n: int = 6
    buckets: int = 2_000_000
    lr: float = 0.025
    min_lr: float = 0.0001
    sample: float = 1e-3
    seed: int = 0


def _fnv1a(data: bytes) -> int:
    h = 2166136261
    for b in data:
        h ^= b
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, min_n: int = 3, max_n: int = 6) -> List[str]:
    w = f"<{word}>"
    out = []
    for n in range(min_n, max_n + 1):
        for i in range(len(w) - n + 1):
            out.append(w[i : i + n])
    return out


def ngram_buckets(word: str, min_n: int, max_n: int, buckets: int) -> List[int]:
    return [_fnv1a(g.encode("utf-8")) % buckets for g in char_ngrams(word, min_n, max_n)]


@dataclass
class EmbeddingTable:
    """Trained word vectors plus the sparse bank of touched n-gram buckets.

    ``bucket_ids[j]`` is the hash bucket stored in ``bucket_vectors[j]``;
    buckets never touched in training are implicitly zero and are skipped
    when composing a vector.
    """

    config: EmbeddingConfig
    words: List[str]
    word_rows: np.ndarray
    bucket_ids: np.ndarray
    bucket_vectors: np.ndarray
    vocab: Dict[str, int] = field(init=False)
    word_vectors: np.ndarray = field(init=False, repr=False)
    _bucket_index: Dict[int, int] = field(init=False, repr=False)
    _unit: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vocab = {w: i for i, w in enumerate(self.words)}
        self._bucket_index = {int(b): j for j, b in enumerate(self.bucket_ids)}
        self.word_vectors = np.stack([self._compose(w, self.vocab[w]) for w in self.words]) \
            if self.words else np.zeros((0, self.dim), dtype=np.float32)
        norms = np.linalg.norm(self.word_vectors, axis=1, keepdims=True)
        self._unit = self.word_vectors / np.where(norms == 0, 1, norms)

    @property
    def dim(self) -> int:
        return self.config.dim

    @classmethod
    def from_vectors(cls, words: Sequence[str], vectors) -> "EmbeddingTable":
        """Wrap explicit vectors (no subword information)."""
        vectors = np.asarray(vectors, dtype=np.float32)
        cfg = EmbeddingConfig(dim=vectors.shape[1])
        return cls(cfg, list(words), vectors, np.zeros(0, dtype=np.int64),
                   np.zeros((0, vectors.shape[1]), dtype=np.float32))

    def _compose(self, word: str, row: Optional[int]) -> np.ndarray:
        rows = []
        if row is not None:
            rows.append(self.word_rows[row])
        c = self.config
        for b in ngram_buckets(word, c.min_n, c.max_n, c.buckets):
            j = self._bucket_index.get(b)
            if j is not None:
                rows.append(self.bucket_vectors[j])
        if not rows:
            return np.zeros(self.dim, dtype=np.float32)
        return np.mean(rows, axis=0).astype(np.float32)

    def vector(self, word: str) -> np.ndarray:
        i = self.vocab.get(word)
        if i is not None:
            return self.word_vectors[i]
        return self._compose(word, None)

    def __contains__(self, word: str) -> bool:
        return word in self.vocab

    def save(self, path) -> None:
        c = self.config
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIIII", VERSION, c.dim, len(self.words), c.buckets, len(self.bucket_ids)))
            fh.write(struct.pack("<IIIIII", c.window, c.negative, c.epochs, c.min_count, c.min_n, c.max_n))
            fh.write(struct.pack("<ddd", c.lr, c.min_lr, c.sample))
            fh.write(struct.pack("<q", c.seed))
            for w in self.words:
                b = w.encode("utf-8")
                fh.write(struct.pack("<I", len(b)))
                fh.write(b)
            fh.write(np.asarray(self.bucket_ids, dtype="<u4").tobytes())
            fh.write(np.asarray(self.word_rows, dtype="<f4").tobytes())
            fh.write(np.asarray(self.bucket_vectors, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, "rb") as fh:
            data = fh.read()
        if not data.startswith(MAGIC):
            raise MalformedRecord(f"{path}: not an embedding file")
        off = len(MAGIC)
        version, dim, n_words, n_buckets, n_stored = struct.unpack_from("<IIIII", data, off)
        off += 20
        if version != VERSION:
            raise MalformedRecord(f"{path}: unsupported embedding version {version}")
        window, negative, epochs, min_count, min_n, max_n = struct.unpack_from("<IIIIII", data, off)
        off += 24
        lr, min_lr, sample = struct.unpack_from("<ddd", data, off)
        off += 24
        (seed,) = struct.unpack_from("<q", data, off)
        off += 8
        words = []
        for _ in range(n_words):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            words.append(data[off : off + n].decode("utf-8"))
            off += n
        bucket_ids = np.frombuffer(data, dtype="<u4", count=n_stored, offset=off).astype(np.int64)
        off += 4 * n_stored
        word_rows = np.frombuffer(data, dtype="<f4", count=n_words * dim, offset=off).reshape(n_words, dim)
        off += 4 * n_words * dim
        bucket_vectors = np.frombuffer(data, dtype="<f4", count=n_stored * dim, offset=off).reshape(n_stored, dim)
        cfg = EmbeddingConfig(dim=dim, window=window, negative=negative, epochs=epochs, min_count=min_count,
                              min_n=min_n, max_n=max_n, buckets=n_buckets, lr=lr, min_lr=min_lr,
                              sample=sample, seed=seed)
        return cls(cfg, words, word_rows.copy(), bucket_ids, bucket_vectors.copy())


def train_embeddings(token_streams: Iterable[Sequence[str]], config: EmbeddingConfig = EmbeddingConfig()) -> EmbeddingTable:
    """Skip-gram with negative sampling over words and hashed character n-grams."""
    streams = [list(s) for s in token_streams if len(s) > 0]
    if not streams:
        raise EmptyCorpus("no tokens to train embeddings on")
    c = config
    counts: Dict[str, int] = {}
    for s in streams:
        for t in s:
            counts[t] = counts.get(t, 0) + 1
    words = sorted((w for w, n in counts.items() if n >= c.min_count), key=lambda w: (-counts[w], w))
    if not words:
        raise EmptyCorpus(f"no word reaches min_count={c.min_count}")
    vocab = {w: i for i, w in enumerate(words)}
    V = len(words)

    # input matrix = word rows followed by the rows of buckets used by the vocabulary
    bucket_row: Dict[int, int] = {}
    inputs_of: List[np.ndarray] = []
    for w in words:
        rows = [vocab[w]]
        for b in ngram_buckets(w, c.min_n, c.max_n, c.buckets):
            if b not in bucket_row:
                bucket_row[b] = len(bucket_row)
            rows.append(V + bucket_row[b])
        inputs_of.append(np.array(rows, dtype=np.int64))

    rng = np.random.default_rng(c.seed)
    wi = rng.uniform(-1.0 / c.dim, 1.0 / c.dim, size=(V + len(bucket_row), c.dim))
    wo = np.zeros((V, c.dim))

    freq = np.array([counts[w] for w in words], dtype=np.float64)
    total = freq.sum()
    noise = freq ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)
    if c.sample > 0:
        thr = c.sample * total
        keep_prob = np.minimum(1.0, (np.sqrt(freq / thr) + 1.0) * thr / freq)
    else:
        keep_prob = np.ones(V)

    encoded = [np.array([vocab[t] for t in s if t in vocab], dtype=np.int64) for s in streams]
    total_steps = c.epochs * sum(len(s) for s in encoded)
    step = 0
    for _ in range(c.epochs):
        for sent in encoded:
            if len(sent) == 0:
                continue
            sent = sent[rng.random(len(sent)) < keep_prob[sent]]
            n = len(sent)
            spans = rng.integers(1, c.window + 1, size=n)
            for pos in range(n):
                lr = c.lr - (c.lr - c.min_lr) * (step / max(1, total_steps))
                step += 1
                b = spans[pos]
                ctx = np.concatenate([sent[max(0, pos - b) : pos], sent[pos + 1 : pos + 1 + b]])
                if len(ctx) == 0:
                    continue
                negs = np.searchsorted(noise_cdf, rng.random((len(ctx), c.negative)) * noise_cdf[-1])
                np.minimum(negs, V - 1, out=negs)
                targets = np.concatenate([ctx[:, None], negs], axis=1).ravel()
                labels = np.zeros((len(ctx), 1 + c.negative))
                labels[:, 0] = 1.0
                labels = labels.ravel()

                rows = inputs_of[sent[pos]]
                h = wi[rows].mean(axis=0)
                score = 1.0 / (1.0 + np.exp(-np.clip(wo[targets] @ h, -30, 30)))
                g = lr * (labels - score)
                grad_h = g @ wo[targets]
                np.add.at(wo, targets, np.outer(g, h))
                wi[rows] += grad_h

    bucket_ids = np.empty(len(bucket_row), dtype=np.int64)
    for b, j in bucket_row.items():
        bucket_ids[j] = b
    return EmbeddingTable(c, words, wi[:V].astype(np.float32), bucket_ids, wi[V:].astype(np.float32))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine of shapes {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def most_similar(table: EmbeddingTable, word: str, k: int = 5) -> List[Tuple[str, float]]:
    """Top-k vocabulary words by cosine, excluding ``word``; ties by word."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = table.vector(word).astype(np.float64)
    nq = np.linalg.norm(q)
    if nq == 0 or not table.words:
        sims = np.zeros(len(table.words))
    else:
        sims = table._unit.astype(np.float64) @ (q / nq)
    order = sorted((i for i, w in enumerate(table.words) if w != word), key=lambda i: (-round(float(sims[i]), 12), table.words[i]))
    return [(table.words[i], float(min(1.0, max(-1.0, sims[i])))) for i in order[:k]]


@dataclass
class SentenceEncoder:
    """Mean-pooled word vectors compared by cosine against a fixed threshold."""

    table: EmbeddingTable
    threshold: float = 0.5

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        return embed_sentence(self, tokens)

    def similarity(self, a: Sequence[str], b: Sequence[str]) -> float:
        return cosine(self.embed(a), self.embed(b))


def embed_sentence(encoder: SentenceEncoder, tokens: Sequence[str]) -> np.ndarray:
    if len(tokens) == 0:
        raise EmptySentence("cannot embed an empty token list")
    vecs = np.stack([encoder.table.vector(t).astype(np.float64) for t in tokens])
    return vecs.mean(axis=0)


@dataclass(frozen=True)
class LabeledPair:
    report_id: str
    sentence_tokens: Tuple[str, ...]
    annotation_tokens: Tuple[str, ...]
    label: int


def calibrate_threshold(encoder: SentenceEncoder, labeled_pairs: Sequence[LabeledPair]) -> float:
    """Pick the accuracy-maximizing cut between observed similarities.

    Candidates are midpoints between consecutive distinct scores plus one cut
    below the minimum (everything positive) and one at the maximum (everything
    negative). A pair is positive when its score is strictly above the cut.
    Ties go to the larger threshold. The chosen value is stored on the encoder.
    """
    labels = np.array([p.label for p in labeled_pairs], dtype=int)
    if len(set(labels.tolist())) < 2:
        raise DegenerateLabels("threshold calibration needs both positive and negative pairs")
    scores = np.array([encoder.similarity(p.sentence_tokens, p.annotation_tokens) for p in labeled_pairs])
    uniq = np.unique(scores)
    cands = [float(np.nextafter(uniq[0], -np.inf))]
    cands += [float((a + b) / 2) for a, b in zip(uniq[:-1], uniq[1:])]
    cands.append(float(uniq[-1]))
    best_t, best_acc = None, -1.0
    for t in cands:
        acc = float(np.mean((scores > t).astype(int) == labels))
        if acc > best_acc or (acc == best_acc and t > best_t):
            best_t, best_acc = t, acc
    encoder.threshold = best_t
    return best_t


def threshold_accuracy(encoder: SentenceEncoder, labeled_pairs: Sequence[LabeledPair], threshold=None) -> float:
    t = encoder.threshold if threshold is None else threshold
    hits = [
        int(encoder.similarity(p.sentence_tokens, p.annotation_tokens) > t) == p.label
        for p in labeled_pairs
    ]
    return float(np.mean(hits)) if hits else 0.0


def make_encoder_pairs(reports, manual_matches, seed: int = 0) -> List[LabeledPair]:
    """Positives from manual matches; two random unmatched pairs per report as negatives."""
    by_id = {r.id: r for r in reports}
    matched: Dict[str, set] = {}
    for m in manual_matches:
        if m.sentence_index is None or getattr(m, "label", 1) != 1:
            continue
        matched.setdefault(m.report_id, set()).add((m.sentence_index, m.annotation_index))
    rng = np.random.default_rng(seed)
    pairs: List[LabeledPair] = []
    for r in reports:
        if r.id not in matched:
            continue
        for s_idx, a_idx in sorted(matched[r.id]):
            pairs.append(LabeledPair(r.id, r.sentences[s_idx].tokens, tuple(r.annotations[a_idx].tokens()), 1))
        negatives = [
            (s, a)
            for s in range(len(r.sentences))
            for a in range(len(r.annotations))
            if (s, a) not in matched[r.id]
        ]
        take = min(2, len(negatives))
        for j in rng.choice(len(negatives), size=take, replace=False) if take else []:
            s, a = negatives[int(j)]
            pairs.append(LabeledPair(r.id, r.sentences[s].tokens, tuple(r.annotations[a].tokens()), 0))
    return pairs
