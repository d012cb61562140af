"""Synthetic session logs in which the clicked document depends on both history and query.

Each session has a topic and each turn a subtopic. Queries contain only
subtopic words, so the topic is visible only through the titles of the
history clicks. The clicked title carries words of both; every distractor
shares exactly one of the two.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .corpus import Candidate, Document, QueryTurn, Session
from .textproc import attach_tokens

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynConfig:
    n_topics: int = 4
    n_subtopics: int = 12
    n_sessions: int = 2000
    # short (2 turns) / medium (3-4) / long (5-6) session mix
    length_mix: tuple[float, float, float] = (0.665, 0.2724, 0.0626)
    topic_vocab: int = 6
    noise_vocab: int = 40
    docs_per_intent: int = 2
    n_candidates: int = 5
    query_terms: int = 2
    title_topic_terms: int = 2
    title_noise_terms: int = 2  # upper bound; each title draws 0..this many
    # chance that a same-topic distractor comes from a neighbouring subtopic
    near_distractor_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        counts = ("n_topics", "n_subtopics", "n_sessions", "topic_vocab", "docs_per_intent",
                  "n_candidates", "query_terms")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if abs(sum(self.length_mix) - 1.0) > 1e-9 or min(self.length_mix) < 0:
            raise ValueError("length_mix must be a probability vector")
        if self.n_topics < 2 or self.n_subtopics < 2:
            raise ValueError("need at least 2 topics and 2 subtopics for distractors")
        if self.query_terms > self.n_subtopics:
            raise ValueError("query_terms exceeds n_subtopics")
        if self.title_topic_terms > self.topic_vocab or self.title_noise_terms > self.noise_vocab:
            raise ValueError("title term counts exceed their vocabularies")


def _words(n: int) -> list[str]:
    syll = [c + v for c in _CONSONANTS for v in _VOWELS]
    out = []
    for k in itertools.count(2):
        for combo in itertools.product(syll, repeat=k):
            out.append("".join(combo))
            if len(out) == n:
                return out
    return out


def session_length(rng: np.random.Generator, mix) -> int:
    cls = rng.choice(3, p=np.asarray(mix))
    if cls == 0:
        return 2
    if cls == 1:
        return int(rng.integers(3, 5))
    return int(rng.integers(5, 7))


def generate_labeled(config: SynConfig) -> tuple[list[Session], dict[str, tuple[int, int]]]:
    """Sessions plus (topic, subtopic) labels for every query_id and doc_id.

    Subtopics sit on a ring of words: subtopic ``s`` is queried with words
    ``s .. s + query_terms - 1``, so neighbouring subtopics share terms.
    """
    rng = np.random.default_rng(config.seed)
    T, S = config.n_topics, config.n_subtopics
    words = _words(T * config.topic_vocab + S + config.noise_vocab)
    np.random.default_rng(0).shuffle(words)
    topic_words = [words[t * config.topic_vocab:(t + 1) * config.topic_vocab] for t in range(T)]
    ring = words[T * config.topic_vocab: T * config.topic_vocab + S]
    noise = words[T * config.topic_vocab + S:]
    query_words = [[ring[(s + i) % S] for i in range(config.query_terms)] for s in range(S)]

    labels: dict[str, tuple[int, int]] = {}
    docs: dict[tuple[int, int], list[Document]] = {}
    for t in range(T):
        for s in range(S):
            pool = []
            for v in range(config.docs_per_intent):
                title = list(rng.choice(topic_words[t], config.title_topic_terms, replace=False))
                title += query_words[s]
                n_noise = int(rng.integers(config.title_noise_terms + 1))
                if n_noise:
                    title += list(rng.choice(noise, n_noise, replace=False))
                rng.shuffle(title)
                doc_id = f"D{t:02d}{s:02d}{v}"
                labels[doc_id] = (t, s)
                pool.append(Document(doc_id, " ".join(title)))
            docs[(t, s)] = pool

    width = len(str(config.n_sessions))
    sessions = []
    for i in range(config.n_sessions):
        sid = f"S{i:0{width}d}"
        topic = int(rng.integers(T))
        n_turns = session_length(rng, config.length_mix)
        turns = []
        used_subs: set[int] = set()
        for j in range(n_turns):
            sub = int(rng.integers(S))
            while sub in used_subs:
                sub = int(rng.integers(S))
            used_subs.add(sub)
            qid = f"{sid}-{j + 1}"
            labels[qid] = (topic, sub)
            clicked = docs[(topic, sub)][int(rng.integers(config.docs_per_intent))]
            cands = [Candidate(clicked, True)]
            used = {clicked.doc_id}
            while len(cands) < config.n_candidates:
                if rng.random() < 0.5:
                    if rng.random() < config.near_distractor_prob:
                        step = 1 if rng.random() < 0.5 else S - 1
                    else:
                        step = 1 + int(rng.integers(S - 1))
                    t2, s2 = topic, (sub + step) % S
                else:
                    t2, s2 = int((topic + 1 + rng.integers(T - 1)) % T), sub
                d = docs[(t2, s2)][int(rng.integers(config.docs_per_intent))]
                if d.doc_id in used:
                    continue
                used.add(d.doc_id)
                cands.append(Candidate(d, False))
            order = rng.permutation(len(cands))
            turns.append(QueryTurn(qid, " ".join(query_words[sub]), [cands[k] for k in order]))
        sessions.append(Session(sid, turns))
    attach_tokens(sessions)
    return sessions, labels


def generate(config: SynConfig) -> list[Session]:
    return generate_labeled(config)[0]


def split_sessions(sessions: list[Session], test_fraction: float, seed: int) -> tuple[list[Session], list[Session]]:
    """Deterministic session-level train/test split preserving log order."""
    rng = np.random.default_rng([seed, 4])
    is_test = rng.random(len(sessions)) < test_fraction
    return ([s for s, t in zip(sessions, is_test) if not t], [s for s, t in zip(sessions, is_test) if t])


def self_test(sessions: list[Session], labels: dict[str, tuple[int, int]]) -> tuple[float, float]:
    """(label-oracle MRR, query-only BM25 MRR) over turns with history.

    Raises when the oracle is imperfect or the query-only scorer is not
    strictly worse, i.e. when history would not be needed to rank.
    """
    from .corpus import corpus_documents
    from .retrieval import Bm25Index

    docs = corpus_documents(sessions)
    index = Bm25Index({d: doc.title_tokens for d, doc in docs.items()})
    oracle_rr, lexical_rr = [], []
    for s in sessions:
        for turn in s.turns[1:]:
            want = labels[turn.query_id]
            ids = sorted(c.doc_id for c in turn.candidates)
            target = turn.first_click
            oracle = sorted(ids, key=lambda d: (labels[d] != want, d))
            lexical = sorted(ids, key=lambda d: (-index.score(turn.tokens, d), d))
            oracle_rr.append(1.0 / (oracle.index(target) + 1))
            lexical_rr.append(1.0 / (lexical.index(target) + 1))
    oracle_mrr = float(np.mean(oracle_rr))
    lexical_mrr = float(np.mean(lexical_rr))
    if oracle_mrr != 1.0 or not lexical_mrr < oracle_mrr:
        raise AssertionError(f"synthetic log fails self-test: oracle MRR {oracle_mrr}, lexical MRR {lexical_mrr}")
    return oracle_mrr, lexical_mrr
