"""Tokenization, vocabulary construction and random term sampling."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .corpus import Session, corpus_documents

CLS, SEP, EOS, TERM_DEL, EMPTY_Q, EMPTY_D, UNK = (
    "[CLS]",
    "[SEP]",
    "[EOS]",
    "[term_del]",
    "[empty_q]",
    "[empty_d]",
    "[UNK]",
)
RESERVED = (CLS, SEP, EOS, TERM_DEL, EMPTY_Q, EMPTY_D, UNK)
_RESERVED_SET = frozenset(RESERVED)


def _strip(token: str) -> str:
    start, end = 0, len(token)
    while start < end and not token[start].isalnum():
        start += 1
    while end > start and not token[end - 1].isalnum():
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenizer; reserved bracket tokens pass through."""
    out = []
    for raw in text.split():
        if raw in _RESERVED_SET:
            out.append(raw)
            continue
        tok = _strip(raw.lower())
        if tok:
            out.append(tok)
    return out


def attach_tokens(sessions: Iterable[Session]) -> None:
    """Fill the token fields of every turn and document in place."""
    sessions = list(sessions)
    for session in sessions:
        for turn in session.turns:
            turn.tokens = tokenize(turn.text)
    for doc in corpus_documents(sessions).values():
        doc.title_tokens = tokenize(doc.title_text)


@dataclass
class Vocabulary:
    terms: list[str]
    freq: dict[str, int] = field(default_factory=dict)
    doc_freq: dict[str, int] = field(default_factory=dict)
    total: int = 0

    def __post_init__(self):
        if tuple(self.terms[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def id(self, term: str) -> int:
        return self.index.get(term, self.index[UNK])

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    @property
    def regular_terms(self) -> list[str]:
        return self.terms[len(RESERVED):]

    def save_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, term in enumerate(self.terms):
                fh.write(f"{i}\t{term}\n")

    @classmethod
    def load_tsv(cls, path: str | Path) -> "Vocabulary":
        terms = []
        with open(path, encoding="utf-8") as fh:
            for expected, line in enumerate(fh):
                idx, term = line.rstrip("\n").split("\t")
                if int(idx) != expected:
                    raise ValueError(f"vocabulary ids not dense at line {expected + 1}")
                terms.append(term)
        return cls(terms)


def _texts(sessions: list[Session]) -> Iterable[list[str]]:
    for session in sessions:
        for turn in session.turns:
            yield turn.tokens or tokenize(turn.text)
    for doc in corpus_documents(sessions).values():
        yield doc.title_tokens or tokenize(doc.title_text)


def build_vocab(sessions: Iterable[Session], min_freq: int = 1) -> Vocabulary:
    """Vocabulary over query texts and distinct document titles.

    Ids: reserved tokens first, then terms by descending frequency, ties
    broken lexicographically.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    sessions = list(sessions)
    freq: Counter[str] = Counter()
    dfreq: Counter[str] = Counter()
    for toks in _texts(sessions):
        toks = [t for t in toks if t not in _RESERVED_SET]
        freq.update(toks)
        dfreq.update(set(toks))
    kept = sorted((t for t, c in freq.items() if c >= min_freq), key=lambda t: (-freq[t], t))
    return Vocabulary(
        list(RESERVED) + kept,
        {t: freq[t] for t in kept},
        {t: dfreq[t] for t in kept},
        sum(freq.values()),
    )


def sample_term(vocab: Vocabulary, rng: np.random.Generator, exclude: Optional[str] = None) -> str:
    """Uniformly sample a non-reserved term different from ``exclude``."""
    start = len(RESERVED)
    n = len(vocab.terms) - start
    skip = vocab.index.get(exclude, -1) if exclude is not None else -1
    if skip >= start:
        n -= 1
    if n <= 0:
        raise ValueError("no eligible term to sample")
    i = start + int(rng.integers(n))
    if skip >= start and i >= skip:
        i += 1
    return vocab.terms[i]
