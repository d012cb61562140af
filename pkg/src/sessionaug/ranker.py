"""Context-aware ranker: session sequence assembly, pooled encoder + MLP head, margin hinge training."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .augment import TERM_LEVEL, TrainingPair
from .corpus import SearchContext
from .retrieval import RankingList
from .textproc import CLS, EOS, SEP, Vocabulary, tokenize

CHECKPOINT_MAGIC = b"SAUGRNK\x00"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIII")


class SequenceTooLong(ValueError):
    pass


@dataclass
class SequenceInput:
    ids: np.ndarray
    history_end: int  # index one past the last history token (1 when history is empty)
    query_end: int  # index of the first [SEP]
    n_history: int  # history pairs kept after truncation

    def __len__(self) -> int:
        return len(self.ids)


def assemble_sequence(history: Sequence[tuple[Sequence[str], Sequence[str]]], query: Sequence[str],
                      doc: Sequence[str], vocab: Vocabulary, max_len: int = 256) -> SequenceInput:
    """``[CLS] q_1 [EOS] d_1 [EOS] ... q_c [EOS] [SEP] d [EOS] [SEP]`` as ids.

    Oldest history pairs are dropped whole until the sequence fits ``max_len``.
    """
    cls, eos, sep = vocab.index[CLS], vocab.index[EOS], vocab.index[SEP]
    tail = vocab.encode(query) + [eos, sep] + vocab.encode(doc) + [eos, sep]
    if 1 + len(tail) > max_len:
        raise SequenceTooLong(f"sequence needs {1 + len(tail)} tokens even without history (max_len={max_len})")
    blocks = [vocab.encode(q) + [eos] + vocab.encode(d) + [eos] for q, d in history]
    budget = max_len - 1 - len(tail)
    kept = len(blocks)
    used = sum(len(b) for b in blocks)
    first = 0
    while used > budget:
        used -= len(blocks[first])
        first += 1
        kept -= 1
    ids = [cls]
    for b in blocks[first:]:
        ids.extend(b)
    hist_end = len(ids)
    ids.extend(tail)
    return SequenceInput(np.array(ids, dtype=np.int64), hist_end, hist_end + len(query) + 1, kept)


class SequenceBank:
    """Deduplicated id sequences stored flat with offsets, as the pooling kernels expect."""

    def __init__(self):
        self._index: dict[tuple[int, ...], int] = {}
        self._flat: list[int] = []
        self._offsets: list[int] = [0]
        self._frozen: Optional[tuple[np.ndarray, np.ndarray]] = None

    def add(self, seq: SequenceInput) -> int:
        key = tuple(seq.ids.tolist())
        row = self._index.get(key)
        if row is None:
            row = self._index[key] = len(self._offsets) - 1
            self._flat.extend(key)
            self._offsets.append(len(self._flat))
            self._frozen = None
        return row

    def __len__(self) -> int:
        return len(self._offsets) - 1

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._frozen is None:
            self._frozen = (np.array(self._flat, dtype=np.int64), np.array(self._offsets, dtype=np.int64))
        return self._frozen


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


class RankerModel:
    """Mean-pooled token embeddings -> tanh hidden layer -> scalar score."""

    PARAMS = ("E", "W1", "b1", "w2", "b2")

    def __init__(self, E, W1, b1, w2, b2, vocab: Optional[Vocabulary] = None):
        self.E = np.ascontiguousarray(E, dtype=np.float64)
        self.W1 = np.ascontiguousarray(W1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(b1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(w2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(b2, dtype=np.float64).reshape(1)
        self.vocab = vocab
        if self.W1.shape != (len(self.b1), self.E.shape[1]) or self.w2.shape != self.b1.shape:
            raise ValueError("inconsistent parameter shapes")

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    @property
    def hidden(self) -> int:
        return len(self.b1)

    @classmethod
    def initialize(cls, vocab: Vocabulary, dim: int = 64, hidden: int = 32, seed: int = 0) -> "RankerModel":
        rng = np.random.default_rng([seed, 2])
        E = rng.normal(0.0, 1.0, size=(len(vocab), dim))
        W1 = rng.uniform(-1.0, 1.0, size=(hidden, dim)) / np.sqrt(dim)
        w2 = rng.uniform(-1.0, 1.0, size=hidden) / np.sqrt(hidden)
        return cls(E, W1, np.zeros(hidden), w2, np.zeros(1), vocab)

    @classmethod
    def zeros(cls, vocab: Vocabulary, dim: int = 64, hidden: int = 32) -> "RankerModel":
        return cls(np.zeros((len(vocab), dim)), np.zeros((hidden, dim)), np.zeros(hidden), np.zeros(hidden),
                   np.zeros(1), vocab)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAMS}

    def copy(self) -> "RankerModel":
        return RankerModel(*(p.copy() for p in self.params().values()), vocab=self.vocab)

    # forward/backward over rows of a flat id table
    def forward(self, ids, offsets, rows):
        X = kernels.mean_pool(self.E, ids, offsets, rows)
        Hh = np.tanh(X @ self.W1.T + self.b1)
        return Hh @ self.w2 + self.b2[0], (X, Hh)

    def backward(self, g, cache, ids, offsets, rows) -> dict[str, np.ndarray]:
        X, Hh = cache
        dZ = np.outer(g, self.w2) * (1.0 - Hh * Hh)
        grads = {
            "E": np.zeros_like(self.E),
            "W1": dZ.T @ X,
            "b1": dZ.sum(axis=0),
            "w2": Hh.T @ g,
            "b2": np.array([g.sum()]),
        }
        kernels.mean_pool_grad(dZ @ self.W1, ids, offsets, rows, grads["E"])
        return grads

    # checkpoint I/O
    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self.dim, self.hidden, self.E.shape[0]))
            for name in self.PARAMS:
                fh.write(getattr(self, name).astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path, vocab: Optional[Vocabulary] = None) -> "RankerModel":
        data = Path(path).read_bytes()
        magic, version, dim, hidden, n_vocab = _HEADER.unpack_from(data)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a ranker checkpoint")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if vocab is not None and len(vocab) != n_vocab:
            raise ValueError(f"checkpoint has |V|={n_vocab}, vocabulary has {len(vocab)}")
        shapes = [(n_vocab, dim), (hidden, dim), (hidden,), (hidden,), (1,)]
        offset = _HEADER.size
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            arrays.append(np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float64))
            offset += 4 * count
        if offset != len(data):
            raise ValueError("checkpoint size does not match its header")
        return cls(*arrays, vocab=vocab)


def score(model: RankerModel, seq: SequenceInput) -> float:
    ids = seq.ids
    s, _ = model.forward(ids, np.array([0, len(ids)]), np.array([0]))
    return float(s[0])


def score_many(model: RankerModel, seqs: Sequence[SequenceInput]) -> np.ndarray:
    flat = np.concatenate([s.ids for s in seqs])
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in seqs])])
    return model.forward(flat, offsets, np.arange(len(seqs)))[0]


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def hinge_loss(p_pos: float, p_neg: float, m: float) -> float:
    # subtracting the gap keeps "zero iff p_pos - p_neg >= m" exact in floating point
    return max(0.0, m - (p_pos - p_neg))


def _sequences(pair: TrainingPair, vocab: Vocabulary, max_len: int) -> tuple[SequenceInput, SequenceInput]:
    return (assemble_sequence(pair.history, pair.query, pair.doc, vocab, max_len),
            assemble_sequence(pair.history, pair.neg_query, pair.neg_doc, vocab, max_len))


def query_loss(model: RankerModel, pairs: Sequence[TrainingPair], max_len: int = 256) -> float:
    """Summed hinge over the original and constructed pairs of one current query."""
    total = 0.0
    for pair in pairs:
        pos, neg = _sequences(pair, model.vocab, max_len)
        total += hinge_loss(score(model, pos), score(model, neg), pair.margin)
    return total


@dataclass
class EncodedPairs:
    bank: SequenceBank
    pos: np.ndarray
    neg: np.ndarray
    margin: np.ndarray
    group: np.ndarray  # dense group index per pair
    term_level: np.ndarray
    n_groups: int


def encode_pairs(pairs: Sequence[TrainingPair], vocab: Vocabulary, max_len: int = 256) -> EncodedPairs:
    bank = SequenceBank()
    groups: dict[str, int] = {}
    pos, neg, group = [], [], []
    for p in pairs:
        s_pos, s_neg = _sequences(p, vocab, max_len)
        pos.append(bank.add(s_pos))
        neg.append(bank.add(s_neg))
        group.append(groups.setdefault(p.group, len(groups)))
    return EncodedPairs(
        bank,
        np.array(pos, dtype=np.int64),
        np.array(neg, dtype=np.int64),
        np.array([p.margin for p in pairs], dtype=np.float64),
        np.array(group, dtype=np.int64),
        np.array([p.strategy in TERM_LEVEL for p in pairs], dtype=bool),
        len(groups),
    )


def batch_loss_and_grad(model: RankerModel, enc: EncodedPairs, pair_idx: np.ndarray, n_groups: int,
                        need_grad: bool = True):
    """Summed hinge over ``pair_idx`` divided by ``n_groups``, with its gradient.

    The hinge subgradient is 0 at the kink.
    """
    ids, offsets = enc.bank.arrays
    rows, inv = np.unique(np.concatenate([enc.pos[pair_idx], enc.neg[pair_idx]]), return_inverse=True)
    s, cache = model.forward(ids, offsets, rows)
    n = len(pair_idx)
    sp, sn = s[inv[:n]], s[inv[n:]]
    h = enc.margin[pair_idx] - (sp - sn)
    active = h > 0
    loss = float(np.sum(np.where(active, h, 0.0))) / n_groups
    if not need_grad:
        return loss, None
    g = np.zeros(len(rows))
    w = active / n_groups
    np.add.at(g, inv[:n], -w)
    np.add.at(g, inv[n:], w)
    return loss, model.backward(g, cache, ids, offsets, rows)


def total_loss(model: RankerModel, enc: EncodedPairs, need_grad: bool = False):
    """Mean over current queries of their summed pair losses."""
    return batch_loss_and_grad(model, enc, np.arange(len(enc.pos)), enc.n_groups, need_grad)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    # paper scale: 3 epochs, lr 4e-5 with AdamW on a BERT backbone
    epochs: int = 5
    lr: float = 0.05
    weight_decay: float = 0.0
    batch_size: int = 64  # current queries per mini-batch
    seed: int = 0
    linear_decay: bool = True
    curriculum: bool = False
    optimizer: str = "adamw"  # adamw | sgd
    dim: int = 64
    hidden: int = 32
    max_len: int = 256

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _epoch_batches(enc: EncodedPairs, rng: np.random.Generator, batch_size: int, keep: np.ndarray):
    members = [[] for _ in range(enc.n_groups)]
    for i in np.flatnonzero(keep):
        members[enc.group[i]].append(i)
    order = [g for g in rng.permutation(enc.n_groups) if members[g]]
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        yield np.array([i for g in chunk for i in members[g]], dtype=np.int64), len(chunk)


def train(model: RankerModel, pairs: Sequence[TrainingPair] | EncodedPairs, config: TrainConfig,
          vocab: Optional[Vocabulary] = None) -> RankerModel:
    """Mini-batch gradient descent with decoupled weight decay; returns a new model.

    Batches are whole current-query groups; the batch objective is the mean
    over its queries of each query's summed hinge losses.
    """
    model = model.copy()
    if config.epochs == 0:
        return model
    enc = pairs if isinstance(pairs, EncodedPairs) else encode_pairs(pairs, vocab or model.vocab, config.max_len)
    if len(enc.pos) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng([config.seed, 3])
    everything = np.ones(len(enc.pos), dtype=bool)
    plans = []
    for epoch in range(config.epochs):
        last = epoch == config.epochs - 1
        plans.append(everything if (last or not config.curriculum) else ~enc.term_level)
    steps_per_epoch = [-(-len({int(g) for g in enc.group[keep]}) // config.batch_size) for keep in plans]
    total_steps = sum(steps_per_epoch)
    step = 0
    params = model.params()
    moments = {name: (np.zeros_like(p), np.zeros_like(p)) for name, p in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for keep in plans:
        for idx, n_groups in _epoch_batches(enc, rng, config.batch_size, keep):
            lr = config.lr * (1.0 - step / total_steps) if config.linear_decay else config.lr
            _, grads = batch_loss_and_grad(model, enc, idx, n_groups)
            step += 1
            for name, p in params.items():
                if config.weight_decay:
                    p -= lr * config.weight_decay * p
                g = grads[name]
                if config.optimizer == "sgd":
                    p -= lr * g
                    continue
                m, v = moments[name]
                m *= beta1
                m += (1.0 - beta1) * g
                v *= beta2
                v += (1.0 - beta2) * g * g
                p -= lr * (m / (1.0 - beta1 ** step)) / (np.sqrt(v / (1.0 - beta2 ** step)) + eps)
    return model


# --------------------------------------------------------------------------
# Inference
# --------------------------------------------------------------------------


def context_history(context: SearchContext) -> list[tuple[list[str], list[str]]]:
    return [(q.tokens or tokenize(q.text), d.title_tokens or tokenize(d.title_text)) for q, d in context.history]


def rank_candidates(model: RankerModel, context: SearchContext, max_len: int = 256) -> RankingList:
    cands = [c.document for c in context.current.candidates]
    if not cands:
        raise ValueError("context has no candidates")
    history = context_history(context)
    query = context.current.tokens or tokenize(context.current.text)
    seqs = [assemble_sequence(history, query, d.title_tokens or tokenize(d.title_text), model.vocab, max_len)
            for d in cands]
    scores = score_many(model, seqs)
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], cands[i].doc_id))
    return RankingList(context.current.query_id, [cands[i].doc_id for i in order], [float(scores[i]) for i in order])
