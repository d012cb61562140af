"""Query-oriented augmentation: altered current queries and margin-tagged training pairs."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import SearchContext, Session
from .mining import AmbiguousMatch
from .textproc import TERM_DEL, Vocabulary, sample_term, tokenize

STRATEGIES = ("mask", "replace", "add", "random", "historical", "ambiguous")
TERM_LEVEL = frozenset({"mask", "replace", "add"})
DIFFICULTY = {
    "random": "easy",
    "mask": "medium",
    "replace": "medium",
    "add": "medium",
    "historical": "medium",
    "ambiguous": "hard",
}
# ablation names -> strategies they remove
ABLATIONS = {
    "TM": ("mask", "replace", "add"),
    "RQ": ("random",),
    "HQ": ("historical",),
    "AQ": ("ambiguous",),
}


@dataclass
class AugmentConfig:
    # paper-scale AOL settings
    n_mask: int = 1
    n_replace: int = 1
    n_add: int = 1
    n_random: int = 3
    n_ambiguous: int = 4
    use_historical: bool = True
    m_op: float = 1.0
    m_rq: float = 1.0
    m_th: float = 0.5
    mean_m_aq: float = 0.2
    w_size: int = 50
    seed: int = 0
    curriculum: bool = False

    def __post_init__(self):
        for name in ("m_op", "m_rq", "m_th", "mean_m_aq"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name}={v} outside (0, 1]")
        if not self.m_rq > self.m_th > self.mean_m_aq:
            raise ValueError("margins must satisfy m_rq > m_th > mean_m_aq")
        for name in ("n_mask", "n_replace", "n_add", "n_random", "n_ambiguous"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def without(self, *ablations: str) -> "AugmentConfig":
        """Copy with the named strategy groups (TM, RQ, HQ, AQ) disabled."""
        values = asdict(self)
        for name in ablations:
            if name not in ABLATIONS:
                raise ValueError(f"unknown ablation {name!r}")
            for strategy in ABLATIONS[name]:
                if strategy == "historical":
                    values["use_historical"] = False
                else:
                    values[f"n_{strategy}"] = 0
        return AugmentConfig(**values)


@dataclass
class AugmentedQuery:
    tokens: list[str]
    strategy: str
    margin: float
    provenance: dict = field(default_factory=dict)

    @property
    def difficulty(self) -> str:
        return DIFFICULTY[self.strategy]


@dataclass
class TrainingPair:
    """Positive (H, q_c, d_c) against one negative sequence sharing H."""

    group: str  # context key; pairs of one current query share it
    kind: str  # original | constructed
    strategy: str  # original pairs use "original"
    margin: float
    history: list[tuple[list[str], list[str]]]
    query: list[str]
    doc: list[str]
    neg_query: list[str]
    neg_doc: list[str]
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        hist = [[" ".join(q), " ".join(d)] for q, d in self.history]
        record = {
            "group": self.group,
            "kind": self.kind,
            "strategy": self.strategy,
            "margin": self.margin,
            "positive": {"history": hist, "query": " ".join(self.query), "doc": " ".join(self.doc)},
            "negative": {"history": hist, "query": " ".join(self.neg_query), "doc": " ".join(self.neg_doc)},
            "provenance": self.provenance,
        }
        return json.dumps(record, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "TrainingPair":
        r = json.loads(line)
        pos, neg = r["positive"], r["negative"]
        return cls(
            r["group"], r["kind"], r["strategy"], r["margin"],
            [(tokenize(q), tokenize(d)) for q, d in pos["history"]],
            tokenize(pos["query"]), tokenize(pos["doc"]),
            tokenize(neg["query"]), tokenize(neg["doc"]),
            r.get("provenance", {}),
        )


# --------------------------------------------------------------------------
# Term-level modification
# --------------------------------------------------------------------------


def mask_term(q_tokens: Sequence[str], rng: np.random.Generator, margin: float = 0.5,
              position: Optional[int] = None) -> AugmentedQuery:
    """Replace one uniformly chosen token (0-based ``position``) with ``[term_del]``."""
    if not q_tokens:
        raise ValueError("cannot mask a term of an empty query")
    k = int(rng.integers(len(q_tokens))) if position is None else position
    out = list(q_tokens)
    out[k] = TERM_DEL
    return AugmentedQuery(out, "mask", margin, {"index": k})


def replace_term(q_tokens: Sequence[str], vocab: Vocabulary, rng: np.random.Generator, margin: float = 0.5,
                 position: Optional[int] = None, term: Optional[str] = None) -> AugmentedQuery:
    """Swap one uniformly chosen token for a different vocabulary term."""
    if not q_tokens:
        raise ValueError("cannot replace a term of an empty query")
    k = int(rng.integers(len(q_tokens))) if position is None else position
    if term is None:
        term = sample_term(vocab, rng, exclude=q_tokens[k])
    elif term == q_tokens[k]:
        raise ValueError("replacement term must differ from the replaced one")
    out = list(q_tokens)
    out[k] = term
    return AugmentedQuery(out, "replace", margin, {"index": k, "term": term})


def add_term(q_tokens: Sequence[str], vocab: Vocabulary, rng: np.random.Generator, margin: float = 0.5,
             gap: Optional[int] = None, term: Optional[str] = None) -> AugmentedQuery:
    """Insert a sampled term into one of the ``len(q_tokens) + 1`` gaps."""
    k = int(rng.integers(len(q_tokens) + 1)) if gap is None else gap
    if term is None:
        term = sample_term(vocab, rng)
    out = list(q_tokens)
    out.insert(k, term)
    return AugmentedQuery(out, "add", margin, {"index": k, "term": term})


# --------------------------------------------------------------------------
# Query-level replacement
# --------------------------------------------------------------------------


class QueryPool:
    """Distinct query texts of a log, with the sessions each occurs in."""

    def __init__(self, sessions: Iterable[Session]):
        self.texts: list[tuple[str, ...]] = []
        self.session_texts: dict[str, set[tuple[str, ...]]] = {}
        self.by_query_id: dict[str, list[str]] = {}
        seen = set()
        for session in sessions:
            own = self.session_texts.setdefault(session.session_id, set())
            for turn in session.turns:
                toks = tuple(turn.tokens or tokenize(turn.text))
                self.by_query_id[turn.query_id] = list(toks)
                own.add(toks)
                if toks and toks not in seen:
                    seen.add(toks)
                    self.texts.append(toks)


def sample_random_queries(pool: QueryPool, n: int, exclude_session: str, rng: np.random.Generator,
                          margin: float = 1.0) -> list[AugmentedQuery]:
    """``n`` distinct query texts drawn uniformly from sessions other than ``exclude_session``."""
    if n <= 0:
        return []
    banned = pool.session_texts.get(exclude_session, set())
    eligible = sum(1 for t in pool.texts if t not in banned) if len(banned) else len(pool.texts)
    if eligible < n:
        raise ValueError(f"only {eligible} queries outside session {exclude_session!r}, need {n}")
    chosen: list[tuple[str, ...]] = []
    taken = set()
    while len(chosen) < n:
        text = pool.texts[int(rng.integers(len(pool.texts)))]
        if text in banned or text in taken:
            continue
        taken.add(text)
        chosen.append(text)
    return [AugmentedQuery(list(t), "random", margin) for t in chosen]


def historical_queries(context: SearchContext, margin: float = 0.5) -> list[AugmentedQuery]:
    return [
        AugmentedQuery(list(q.tokens or tokenize(q.text)), "historical", margin, {"query_id": q.query_id})
        for q, _ in context.history
    ]


def ambiguous_queries(matches: Sequence[AmbiguousMatch], pool: QueryPool) -> list[AugmentedQuery]:
    return [
        AugmentedQuery(list(pool.by_query_id[m.matched]), "ambiguous", m.margin,
                       {"query_id": m.matched, "pos": m.pos, "ambiguity": m.ambiguity})
        for m in matches
    ]


# --------------------------------------------------------------------------
# Training-set assembly
# --------------------------------------------------------------------------


def context_rng(seed: int, key: str) -> np.random.Generator:
    """Per-context stream so results do not depend on processing order."""
    return np.random.default_rng([seed, zlib.crc32(key.encode("utf-8"))])


def augment_context(context: SearchContext, config: AugmentConfig, vocab: Vocabulary, pool: QueryPool,
                    matches: Sequence[AmbiguousMatch] = ()) -> list[AugmentedQuery]:
    """All altered queries for one context; empty when the context has no history."""
    if not context.history:
        return []
    rng = context_rng(config.seed, context.key)
    q = list(context.current.tokens or tokenize(context.current.text))
    out: list[AugmentedQuery] = []
    if q:
        out += [mask_term(q, rng, config.m_th) for _ in range(config.n_mask)]
        out += [replace_term(q, vocab, rng, config.m_th) for _ in range(config.n_replace)]
    out += [add_term(q, vocab, rng, config.m_th) for _ in range(config.n_add)]
    out += sample_random_queries(pool, config.n_random, context.session_id, rng, config.m_rq)
    if config.use_historical:
        out += historical_queries(context, config.m_th)
    if config.n_ambiguous:
        out += ambiguous_queries(list(matches)[: config.n_ambiguous], pool)
    return out


def _doc_tokens(doc) -> list[str]:
    return list(doc.title_tokens or tokenize(doc.title_text))


def context_pairs(context: SearchContext, augmented: Sequence[AugmentedQuery], m_op: float) -> list[TrainingPair]:
    history = [(list(q.tokens or tokenize(q.text)), _doc_tokens(d)) for q, d in context.history]
    q = list(context.current.tokens or tokenize(context.current.text))
    pairs = []
    for d_c in context.clicked:
        dc = _doc_tokens(d_c)
        for d_s in context.skipped:
            pairs.append(TrainingPair(context.key, "original", "original", m_op, history, q, dc, q,
                                      _doc_tokens(d_s), {"doc_id": d_c.doc_id, "neg_doc_id": d_s.doc_id}))
    for aq in augmented:
        for d_c in context.clicked:
            pairs.append(TrainingPair(context.key, "constructed", aq.strategy, aq.margin, history, q,
                                      _doc_tokens(d_c), list(aq.tokens), _doc_tokens(d_c),
                                      {"doc_id": d_c.doc_id, **aq.provenance}))
    return pairs


def build_training_set(contexts: Sequence[SearchContext], config: AugmentConfig, vocab: Vocabulary,
                       pool: QueryPool, matches: Optional[Mapping[str, Sequence[AmbiguousMatch]]] = None
                       ) -> list[TrainingPair]:
    """Original pairs for every context plus constructed pairs for contexts with history.

    ``matches`` maps a current query_id to its mined ambiguous matches.
    With ``config.curriculum`` the term-level pairs are placed after all others.
    """
    matches = matches or {}
    pairs: list[TrainingPair] = []
    for ctx in contexts:
        aug = augment_context(ctx, config, vocab, pool, matches.get(ctx.current.query_id, ()))
        pairs.extend(context_pairs(ctx, aug, config.m_op))
    if config.curriculum:
        pairs = [p for p in pairs if p.strategy not in TERM_LEVEL] + [p for p in pairs if p.strategy in TERM_LEVEL]
    return pairs


def write_training_set(pairs: Iterable[TrainingPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(p.to_json())
            fh.write("\n")


def read_training_set(path: str | Path) -> list[TrainingPair]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingPair.from_json(line) for line in fh if line.strip()]
