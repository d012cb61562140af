"""Stage wiring shared by the CLI and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .augment import AugmentConfig, QueryPool, TrainingPair, build_training_set
from .corpus import SearchContext, Session, corpus_documents, derive_contexts
from .evalkit import EvalRun, MetricsReport, evaluate, run_from_rankings
from .mining import AmbiguousMatch, NegativeWindow, build_windows, mine_all
from .ranker import RankerModel, TrainConfig, rank_candidates, train
from .retrieval import Bm25Index, DualEncoder, DualEncoderConfig, score_all, train_dual_encoder
from .textproc import Vocabulary, attach_tokens, build_vocab


def make_backend(name: str, sessions: Sequence[Session], vocab: Vocabulary,
                 dense_config: DualEncoderConfig = DualEncoderConfig()):
    if name == "bm25":
        docs = corpus_documents(sessions)
        return Bm25Index({d: doc.title_tokens for d, doc in docs.items()})
    if name == "dense":
        return train_dual_encoder(sessions, vocab, dense_config)
    raise ValueError(f"unknown backend {name!r}")


def ranking_order(backend, sessions: Sequence[Session]) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    """(query_ids, doc_ids, best-first column order, scores) over all clicked turns."""
    queries = {t.query_id: t.tokens for s in sessions for t in s.turns if t.first_click is not None}
    corpus = {d: doc.title_tokens for d, doc in corpus_documents(sessions).items()}
    query_ids, doc_ids, scores = score_all(backend, queries, corpus)
    order = np.argsort(-scores, axis=1, kind="stable")
    return query_ids, list(doc_ids), order, scores


def mine(sessions: Sequence[Session], contexts: Sequence[SearchContext], backend, config: AugmentConfig,
         band: str = "medium") -> tuple[list[NegativeWindow], dict[str, list[AmbiguousMatch]]]:
    query_ids, doc_ids, order, _ = ranking_order(backend, sessions)
    windows = build_windows(sessions, doc_ids, order, query_ids, config.w_size)
    with_history = [c for c in contexts if c.history]
    k = max(config.n_ambiguous, 1)
    return windows, mine_all(with_history, windows, k, band, config.mean_m_aq)


@dataclass
class Prepared:
    train_sessions: list[Session]
    test_sessions: list[Session]
    vocab: Vocabulary
    train_contexts: list[SearchContext]
    test_contexts: list[SearchContext]
    pool: QueryPool


def prepare(train_sessions: Sequence[Session], test_sessions: Sequence[Session], min_freq: int = 1) -> Prepared:
    train_sessions, test_sessions = list(train_sessions), list(test_sessions)
    attach_tokens(train_sessions)
    attach_tokens(test_sessions)
    vocab = build_vocab(train_sessions, min_freq)
    return Prepared(
        train_sessions,
        test_sessions,
        vocab,
        derive_contexts(train_sessions, require_history=False),
        derive_contexts(test_sessions, require_history=True),
        QueryPool(train_sessions),
    )


def training_pairs(prep: Prepared, config: AugmentConfig,
                   matches: Optional[Mapping[str, Sequence[AmbiguousMatch]]] = None) -> list[TrainingPair]:
    return build_training_set(prep.train_contexts, config, prep.vocab, prep.pool, matches)


def fit(prep: Prepared, pairs: Sequence[TrainingPair], config: TrainConfig) -> RankerModel:
    model = RankerModel.initialize(prep.vocab, config.dim, config.hidden, config.seed)
    return train(model, pairs, config)


def rank_contexts(model: RankerModel, contexts: Sequence[SearchContext], max_len: int = 256):
    return {c.current.query_id: rank_candidates(model, c, max_len) for c in contexts}


def eval_model(model: RankerModel, contexts: Sequence[SearchContext], max_len: int = 256) -> tuple[EvalRun, MetricsReport]:
    run = run_from_rankings(rank_contexts(model, contexts, max_len), contexts)
    return run, evaluate(run)


# fixed budget for the synthetic comparison; both arms of every comparison share it
EXPERIMENT_TRAIN = {"lr": 0.01, "epochs": 20, "batch_size": 16}
VARIANTS = ("original", "full", "TM", "RQ", "HQ", "AQ")


def run_experiment(seed: int, variants: Sequence[str] = ("original", "full"), syn: Optional[dict] = None,
                   train_overrides: Optional[dict] = None, metric: str = "MRR") -> dict[str, float]:
    """Held-out ``metric`` of rankers trained on one synthetic log.

    ``original`` uses original pairs only, ``full`` every strategy, and a
    group name (TM, RQ, HQ, AQ) everything except that group.
    """
    from .synlog import SynConfig, generate_labeled, split_sessions

    sessions, _ = generate_labeled(SynConfig(seed=seed, **(syn or {})))
    train_s, test_s = split_sessions(sessions, 0.2, seed)
    prep = prepare(train_s, test_s)
    base = AugmentConfig(seed=seed)
    backend = make_backend("bm25", prep.train_sessions, prep.vocab)
    _, matches = mine(prep.train_sessions, prep.train_contexts, backend, base)
    tc = TrainConfig(seed=seed, **{**EXPERIMENT_TRAIN, **(train_overrides or {})})
    out = {}
    for name in variants:
        if name == "original":
            config = base.without("TM", "RQ", "HQ", "AQ")
        elif name == "full":
            config = base
        else:
            config = base.without(name)
        model = fit(prep, training_pairs(prep, config, matches), tc)
        out[name] = eval_model(model, prep.test_contexts, tc.max_len)[1].values[metric]
    return out
