"""Relevance backends (Okapi BM25, dot-product dual encoder) and exhaustive ranking lists."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import Session
from .textproc import Vocabulary, tokenize


@dataclass
class RankingList:
    query_id: str
    doc_ids: list[str]
    scores: list[float]

    def rank_of(self, doc_id: str) -> int:
        """1-based rank of ``doc_id``."""
        return self.doc_ids.index(doc_id) + 1


# --------------------------------------------------------------------------
# BM25
# --------------------------------------------------------------------------


class Bm25Index:
    """Inverted index over tokenized documents with Okapi BM25 scoring."""

    def __init__(self, docs: Mapping[str, Sequence[str]], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        # documents are indexed in ascending doc_id order; that order is the tiebreak
        self.doc_ids = sorted(docs)
        self.doc_pos = {d: i for i, d in enumerate(self.doc_ids)}
        self.doc_tf = [Counter(docs[d]) for d in self.doc_ids]
        self.doc_len = np.array([len(docs[d]) for d in self.doc_ids], dtype=np.float64)
        self.n_docs = len(self.doc_ids)
        self.avgdl = float(self.doc_len.mean()) if self.n_docs else 0.0

        postings: dict[str, list[tuple[int, int]]] = {}
        for i, tf in enumerate(self.doc_tf):
            for term, count in tf.items():
                postings.setdefault(term, []).append((i, count))
        self.postings = postings
        self.idf = {t: self._idf(len(p)) for t, p in postings.items()}

        # flat posting arrays of precomputed per-(term, doc) weights for the kernel
        self.term_ids = {t: i for i, t in enumerate(sorted(postings))}
        offsets = [0]
        docs_flat, weights = [], []
        for term in sorted(postings):
            for i, count in postings[term]:
                docs_flat.append(i)
                weights.append(self._weight(term, count, self.doc_len[i]))
            offsets.append(len(docs_flat))
        self._post_offsets = np.array(offsets, dtype=np.int64)
        self._post_docs = np.array(docs_flat, dtype=np.int64)
        self._post_weights = np.array(weights, dtype=np.float64)

    def _idf(self, df: int) -> float:
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def _weight(self, term: str, tf: int, dl: float) -> float:
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
        return self.idf[term] * tf * (self.k1 + 1.0) / (tf + norm)

    def score(self, query_tokens: Sequence[str], doc_id: str) -> float:
        if doc_id not in self.doc_pos:
            raise KeyError(f"unknown doc_id {doc_id!r}")
        i = self.doc_pos[doc_id]
        tf = self.doc_tf[i]
        total = 0.0
        for term in query_tokens:
            count = tf.get(term, 0)
            if count:
                total += self._weight(term, count, self.doc_len[i])
        return total

    def score_matrix(self, queries: Sequence[Sequence[str]]) -> np.ndarray:
        """Scores of every query against every document (columns in ``doc_ids`` order)."""
        q_ids, q_offsets = [], [0]
        for toks in queries:
            q_ids.extend(self.term_ids[t] for t in toks if t in self.term_ids)
            q_offsets.append(len(q_ids))
        return kernels.bm25_accumulate(
            np.array(q_ids, dtype=np.int64),
            np.array(q_offsets, dtype=np.int64),
            self._post_offsets,
            self._post_docs,
            self._post_weights,
            self.n_docs,
        )


def bm25_score(query_tokens: Sequence[str], doc_id: str, index: Bm25Index) -> float:
    return index.score(query_tokens, doc_id)


# --------------------------------------------------------------------------
# Dual encoder
# --------------------------------------------------------------------------


@dataclass
class DualEncoderConfig:
    dim: int = 64
    epochs: int = 5
    lr: float = 0.05
    batch_size: int = 32
    seed: int = 0


class DualEncoder:
    """Shared term-embedding table; texts are encoded by mean pooling."""

    def __init__(self, vocab: Vocabulary, embeddings: np.ndarray):
        if embeddings.ndim != 2 or embeddings.shape[0] != len(vocab) or embeddings.shape[1] < 2:
            raise ValueError("embedding table must be |V| x dim with dim >= 2")
        self.vocab = vocab
        self.embeddings = embeddings

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @classmethod
    def initialize(cls, vocab: Vocabulary, dim: int, seed: int) -> "DualEncoder":
        rng = np.random.default_rng(seed)
        bound = 0.5 / dim
        return cls(vocab, rng.uniform(-bound, bound, size=(len(vocab), dim)))

    def encode(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
        ids, offsets = _flatten([self.vocab.encode(t) for t in token_lists], self.vocab)
        return kernels.mean_pool(self.embeddings, ids, offsets, np.arange(len(token_lists)))

    def save(self, path) -> None:
        np.save(path, self.embeddings)


def _flatten(id_lists: Sequence[Sequence[int]], vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    # an empty text pools the [UNK] embedding so every sequence has a defined mean
    unk = vocab.index["[UNK]"]
    flat, offsets = [], [0]
    for ids in id_lists:
        flat.extend(ids if ids else [unk])
        offsets.append(len(flat))
    return np.array(flat, dtype=np.int64), np.array(offsets, dtype=np.int64)


def dense_score(encoder: DualEncoder, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> float:
    vecs = encoder.encode([query_tokens, doc_tokens])
    return float(vecs[0] @ vecs[1])


def query_doc_pairs(sessions: Sequence[Session]) -> list[tuple[list[str], list[str]]]:
    """(query tokens, first-click title tokens) for every clicked turn."""
    pairs = []
    for session in sessions:
        for turn in session.turns:
            doc = turn.first_click_document
            if doc is not None:
                pairs.append((turn.tokens or tokenize(turn.text), doc.title_tokens or tokenize(doc.title_text)))
    return pairs


def in_batch_loss(encoder: DualEncoder, pairs) -> float:
    """Mean in-batch softmax cross-entropy over one batch of (query, doc) pairs."""
    q = encoder.encode([p[0] for p in pairs])
    d = encoder.encode([p[1] for p in pairs])
    s = q @ d.T
    s = s - s.max(axis=1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    return float(-np.mean(np.diag(logp)))


def train_dual_encoder(
    sessions: Sequence[Session], vocab: Vocabulary, config: DualEncoderConfig = DualEncoderConfig()
) -> DualEncoder:
    """Train with in-batch negatives: each query's first click is the target
    among all documents of its mini-batch; plain SGD on the shared table."""
    pairs = query_doc_pairs(sessions)
    if not pairs:
        raise ValueError("no (query, clicked document) training pairs")
    encoder = DualEncoder.initialize(vocab, config.dim, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    q_ids, q_off = _flatten([vocab.encode(p[0]) for p in pairs], vocab)
    d_ids, d_off = _flatten([vocab.encode(p[1]) for p in pairs], vocab)
    E = encoder.embeddings
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            q = kernels.mean_pool(E, q_ids, q_off, rows)
            d = kernels.mean_pool(E, d_ids, d_off, rows)
            s = q @ d.T
            s -= s.max(axis=1, keepdims=True)
            p = np.exp(s)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(len(rows)), np.arange(len(rows))] -= 1.0
            p /= len(rows)
            grad = np.zeros_like(E)
            kernels.mean_pool_grad(p @ d, q_ids, q_off, rows, grad)
            kernels.mean_pool_grad(p.T @ q, d_ids, d_off, rows, grad)
            E -= config.lr * grad
    return encoder


# --------------------------------------------------------------------------
# Ranking lists
# --------------------------------------------------------------------------


def _sorted_lists(query_ids, doc_ids, scores) -> dict[str, RankingList]:
    # doc_ids ascending, so a stable sort on -score gives the doc_id tiebreak
    out = {}
    for qid, row in zip(query_ids, scores):
        order = np.argsort(-row, kind="stable")
        out[qid] = RankingList(qid, [doc_ids[i] for i in order], row[order].tolist())
    return out


def score_all(backend, queries: Mapping[str, Sequence[str]], corpus: Mapping[str, Sequence[str]]):
    """Return (query_ids, sorted doc_ids, score matrix) for every query/document pair."""
    if not corpus:
        raise ValueError("empty corpus")
    query_ids = list(queries)
    if isinstance(backend, Bm25Index):
        if sorted(corpus) != backend.doc_ids:
            raise ValueError("BM25 index does not cover the given corpus")
        return query_ids, backend.doc_ids, backend.score_matrix([queries[q] for q in query_ids])
    if isinstance(backend, DualEncoder):
        doc_ids = sorted(corpus)
        qv = backend.encode([queries[q] for q in query_ids])
        dv = backend.encode([corpus[d] for d in doc_ids])
        return query_ids, doc_ids, qv @ dv.T
    raise TypeError(f"unsupported backend {type(backend).__name__}")


def build_ranking_lists(backend, queries: Mapping[str, Sequence[str]], corpus: Mapping[str, Sequence[str]]) -> dict[str, RankingList]:
    """Score every query against every corpus document and sort best-first.

    ``backend`` is a :class:`Bm25Index` built over ``corpus`` or a
    :class:`DualEncoder`.
    """
    return _sorted_lists(*score_all(backend, queries, corpus))
