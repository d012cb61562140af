import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sessionaug.augment import AugmentConfig, QueryPool, TrainingPair, build_training_set
from sessionaug.corpus import Session, derive_contexts
from sessionaug.ranker import (CHECKPOINT_MAGIC, RankerModel, SequenceTooLong, TrainConfig, assemble_sequence,
                               encode_pairs, hinge_loss, query_loss, rank_candidates, score, total_loss, train)
from sessionaug.textproc import attach_tokens, build_vocab, tokenize
from conftest import turn

import oracles


def _words(seq, vocab):
    return [vocab.terms[i] for i in seq.ids]


def _vocab(log):
    return build_vocab(log)


def test_empty_history_template(table2_log):
    v = _vocab(table2_log)
    seq = assemble_sequence([], ["burlington", "wisconsin"], ["burlington", "wi"], v)
    assert _words(seq, v) == ["[CLS]", "burlington", "wisconsin", "[EOS]", "[SEP]", "burlington", "wi", "[EOS]", "[SEP]"]
    assert seq.n_history == 0


def test_session_template(table2_log):
    v = _vocab(table2_log)
    seq = assemble_sequence([(tokenize("racine county history"), tokenize("racine county wi home"))],
                            tokenize("burlington wisconsin"), tokenize("burlington wi official website"), v)
    want = ("[CLS] racine county history [EOS] racine county wi home [EOS] burlington wisconsin [EOS] [SEP] "
            "burlington wi official website [EOS] [SEP]").split()
    assert _words(seq, v) == want
    assert _words(seq, v).count("[SEP]") == 2


def test_truncation_drops_oldest(table2_log):
    v = _vocab(table2_log)
    h = [(["racine"], ["county"]), (["school"], ["supplies"])]
    full = assemble_sequence(h, ["burlington"], ["wi"], v)
    cut = assemble_sequence(h, ["burlington"], ["wi"], v, max_len=len(full) - 1)
    assert cut.n_history == 1
    assert "school" in _words(cut, v) and "racine" not in _words(cut, v)


def test_unfittable_sequence(table2_log):
    with pytest.raises(SequenceTooLong):
        assemble_sequence([], ["a"] * 10, ["b"], _vocab(table2_log), max_len=8)


def test_oov_is_unk(table2_log):
    v = _vocab(table2_log)
    assert "[UNK]" in _words(assemble_sequence([], ["zzzz"], ["wi"], v), v)


def test_zero_model_scores_zero(table2_log):
    v = _vocab(table2_log)
    assert score(RankerModel.zeros(v), assemble_sequence([], ["burlington"], ["wi"], v)) == 0.0


def test_forward_matches_oracle(table2_log):
    v = _vocab(table2_log)
    rng = np.random.default_rng(0)
    for seed in range(10):
        m = RankerModel.initialize(v, dim=7, hidden=5, seed=seed)
        m.b1[:] = rng.normal(size=5)
        m.b2[:] = rng.normal()
        seq = assemble_sequence([(["racine", "county"], ["home"])], ["burlington"], ["wi", "official"], v)
        assert score(m, seq) == pytest.approx(oracles.forward(m, seq.ids.tolist()), abs=1e-12)
        assert score(m, seq) == score(m, seq)


def test_hinge_examples():
    assert hinge_loss(0.8, 0.3, 1.0) == pytest.approx(0.5)
    assert hinge_loss(2.0, 0.5, 1.0) == 0.0
    assert hinge_loss(0.3, 0.3, 0.7) == 0.7


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 2))
def test_hinge_properties(p, n, m):
    h = hinge_loss(p, n, m)
    assert h >= 0
    assert (h == 0) == (p - n >= m)


def _pair(margin, kind="original", neg_q=("burlington",), neg_d=("coat",)):
    return TrainingPair("g", kind, kind if kind == "original" else "random", margin, [(["racine"], ["home"])],
                        ["burlington"], ["wi"], list(neg_q), list(neg_d))


def test_query_loss_examples(table2_log):
    v = _vocab(table2_log)
    m = RankerModel.zeros(v)
    m.b2[:] = 0.0
    # all scores zero -> each hinge equals its margin
    assert query_loss(m, [_pair(1.0)]) == pytest.approx(1.0)
    assert query_loss(m, [_pair(1.0), _pair(0.2, "constructed", ("laugh",), ("wi",))]) == pytest.approx(1.2)


def test_query_loss_inactive_plus_active(table2_log):
    v = _vocab(table2_log)
    m = RankerModel.zeros(v, dim=2, hidden=1)
    # score = w2 * tanh(W1 . pooled): make "wi" score high and "coat" low
    m.W1[0, 0] = 1.0
    m.w2[0] = 10.0
    m.E[v.id("wi"), 0] = 50.0
    m.E[v.id("coat"), 0] = -50.0
    orig = _pair(1.0)
    cons = _pair(0.2, "constructed", ("laugh",), ("wi",))
    pos = score(m, assemble_sequence(orig.history, orig.query, orig.doc, v))
    neg = score(m, assemble_sequence(orig.history, orig.neg_query, orig.neg_doc, v))
    assert pos - neg >= 1.0
    # constructed negative differs only in the query; equal pooled docs give an equal score here
    cons_neg = score(m, assemble_sequence(cons.history, cons.neg_query, cons.neg_doc, v))
    want = max(0.0, 0.2 - pos + cons_neg)
    assert query_loss(m, [orig, cons]) == pytest.approx(want)
    assert query_loss(m, [orig]) == 0.0


def _random_pairs(log, seed=0):
    vocab = build_vocab(log)
    ctxs = derive_contexts(log, require_history=False)
    return vocab, build_training_set(ctxs, AugmentConfig(seed=seed, n_ambiguous=0), vocab, QueryPool(log))


def test_query_loss_order_invariant_and_margin_monotone(table2_log):
    vocab, pairs = _random_pairs(table2_log)
    m = RankerModel.initialize(vocab, dim=8, hidden=4, seed=1)
    group = [p for p in pairs if p.group == pairs[-1].group]
    base = query_loss(m, group)
    assert query_loss(m, group[::-1]) == pytest.approx(base, rel=1e-12)
    doubled = [TrainingPair(p.group, p.kind, p.strategy, 2 * p.margin, p.history, p.query, p.doc, p.neg_query,
                            p.neg_doc) for p in group]
    assert query_loss(m, doubled) >= base


def test_zero_epochs_unchanged(table2_log):
    vocab, pairs = _random_pairs(table2_log)
    m = RankerModel.initialize(vocab, seed=2)
    out = train(m, pairs, TrainConfig(epochs=0))
    assert all(np.array_equal(a, b) for a, b in zip(m.params().values(), out.params().values()))


def test_empty_training_set(table2_log):
    with pytest.raises(ValueError):
        train(RankerModel.initialize(_vocab(table2_log)), [], TrainConfig(epochs=1))


@pytest.mark.parametrize("optimizer", ["sgd", "adamw"])
def test_single_step_widens_gap(table2_log, optimizer):
    v = _vocab(table2_log)
    p = _pair(1.0)
    m = RankerModel.initialize(v, dim=8, hidden=4, seed=3)
    enc = encode_pairs([p], v)
    gap = lambda model: (score(model, assemble_sequence(p.history, p.query, p.doc, v))
                         - score(model, assemble_sequence(p.history, p.neg_query, p.neg_doc, v)))
    assert gap(m) < 1.0  # active
    after = train(m, enc, TrainConfig(epochs=1, lr=1e-3, batch_size=1, optimizer=optimizer, linear_decay=False))
    assert gap(after) > gap(m)


def test_train_deterministic(table2_log):
    vocab, pairs = _random_pairs(table2_log)
    cfg = TrainConfig(epochs=3, batch_size=2, seed=5)
    a = train(RankerModel.initialize(vocab, seed=5), pairs, cfg)
    b = train(RankerModel.initialize(vocab, seed=5), pairs, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params().values(), b.params().values()))


def test_curriculum_changes_schedule(table2_log):
    vocab, pairs = _random_pairs(table2_log)
    base = TrainConfig(epochs=3, batch_size=2, seed=5)
    cur = TrainConfig(epochs=3, batch_size=2, seed=5, curriculum=True)
    a = train(RankerModel.initialize(vocab, seed=5), pairs, base)
    b = train(RankerModel.initialize(vocab, seed=5), pairs, cur)
    assert not np.array_equal(a.E, b.E)


def test_weight_decay_shrinks(table2_log):
    vocab, pairs = _random_pairs(table2_log)
    m = RankerModel.initialize(vocab, seed=0)
    plain = train(m, pairs, TrainConfig(epochs=2, optimizer="sgd", lr=0.01))
    decayed = train(m, pairs, TrainConfig(epochs=2, optimizer="sgd", lr=0.01, weight_decay=5.0))
    assert np.linalg.norm(decayed.W1) < np.linalg.norm(plain.W1)


def gradient_point(log, seed, min_gap=1e-2):
    """A small model and pair set whose hinges all sit at least ``min_gap`` from the kink."""
    vocab, pairs = _random_pairs(log, seed)
    rng = np.random.default_rng(seed)
    while True:
        m = RankerModel.initialize(vocab, dim=5, hidden=4, seed=int(rng.integers(1 << 30)))
        m.b1[:] = rng.normal(scale=0.5, size=m.hidden)
        m.b2[:] = rng.normal()
        enc = encode_pairs(pairs, vocab)
        ids, offsets = enc.bank.arrays
        s, _ = m.forward(ids, offsets, np.arange(len(enc.bank)))
        h = enc.margin - s[enc.pos] + s[enc.neg]
        if np.min(np.abs(h)) > min_gap:
            return m, enc


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(table2_log, seed):
    m, enc = gradient_point(table2_log, seed)
    _, grads = total_loss(m, enc, need_grad=True)
    fd = oracles.finite_difference(lambda model: total_loss(model, enc)[0], m)
    assert oracles.max_relative_error(grads, fd) < 1e-4


def test_rank_single_candidate(table2_log):
    ctx = derive_contexts([Session("x", [turn("qq", "a", [("only", "b", True)])])], False)[0]
    attach_tokens([Session("x", [ctx.current])])
    rl = rank_candidates(RankerModel.initialize(_vocab(table2_log)), ctx)
    assert rl.doc_ids == ["only"]


def test_rank_ties_by_doc_id(table2_log):
    ctx = derive_contexts(table2_log, True)[0]
    rl = rank_candidates(RankerModel.zeros(_vocab(table2_log)), ctx)
    assert rl.doc_ids == sorted(c.doc_id for c in ctx.current.candidates)


def test_rank_matches_sort_oracle(table2_log):
    v = _vocab(table2_log)
    ctx = derive_contexts(table2_log, True)[0]
    m = RankerModel.initialize(v, dim=8, hidden=4, seed=11)
    hist = [(q.tokens, d.title_tokens) for q, d in ctx.history]
    scored = [(oracles.forward(m, assemble_sequence(hist, ctx.current.tokens, c.document.title_tokens, v).ids.tolist()),
               c.doc_id) for c in ctx.current.candidates]
    want = [d for _, d in sorted(scored, key=lambda x: (-x[0], x[1]))]
    assert len(want) == 5
    assert rank_candidates(m, ctx).doc_ids == want


def test_checkpoint_round_trip(table2_log, tmp_path):
    v = _vocab(table2_log)
    m = RankerModel.initialize(v, dim=6, hidden=3, seed=4)
    m.save(tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    magic, version, dim, hidden, n = struct.unpack_from("<8sIIII", raw)
    assert (magic, version, dim, hidden, n) == (CHECKPOINT_MAGIC, 1, 6, 3, len(v))
    assert len(raw) == 24 + 4 * (len(v) * 6 + 3 * 6 + 3 + 3 + 1)
    back = RankerModel.load(tmp_path / "a.ckpt", v)
    for a, b in zip(m.params().values(), back.params().values()):
        assert np.array_equal(a.astype(np.float32), b.astype(np.float32))
    back.save(tmp_path / "b.ckpt")
    assert (tmp_path / "b.ckpt").read_bytes() == raw


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ValueError):
        RankerModel.load(tmp_path / "x")


def separable_log(n_sessions, n_intents=6, seed=0):
    """Intents with disjoint vocabularies; the click always shares the query's intent."""
    rng = np.random.default_rng(seed)
    words = [[f"i{k}w{j}" for j in range(4)] for k in range(n_intents)]
    docs = [[(f"d{k}{v}", " ".join(rng.choice(words[k], 2, replace=False))) for v in range(3)] for k in range(n_intents)]
    sessions = []
    for i in range(n_sessions):
        turns = []
        for j in range(2):
            k = int(rng.integers(n_intents))
            others = rng.choice([o for o in range(n_intents) if o != k], 4, replace=False)
            cands = [docs[k][int(rng.integers(3))] + (True,)] + [docs[o][int(rng.integers(3))] + (False,) for o in others]
            turns.append(turn(f"s{i}-{j}", " ".join(rng.choice(words[k], 2, replace=False)), cands))
        sessions.append(Session(f"s{i}", turns))
    attach_tokens(sessions)
    return sessions


def test_separable_set_fits_with_defaults():
    log = separable_log(1000)
    vocab = build_vocab(log)
    pairs = build_training_set(derive_contexts(log, False), AugmentConfig().without("TM", "RQ", "HQ", "AQ"),
                               vocab, QueryPool(log))
    cfg = TrainConfig()
    model = train(RankerModel.initialize(vocab, cfg.dim, cfg.hidden, cfg.seed), pairs, cfg)
    enc = encode_pairs(pairs, vocab)
    ids, offsets = enc.bank.arrays
    s, _ = model.forward(ids, offsets, np.arange(len(enc.bank)))
    inactive = np.mean(enc.margin - s[enc.pos] + s[enc.neg] <= 0)
    assert inactive >= 0.95
