import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sessionaug.corpus import Session
from sessionaug.evalkit import (EvalRun, QueryResult, breakdown, compute_map, compute_mrr, compute_ndcg, evaluate,
                                export_trec_qrels, export_trec_run, format_report, length_class, read_trec_qrels,
                                read_trec_run, run_from_trec, write_report_tsv)
from sessionaug.retrieval import RankingList
from conftest import turn

import oracles


def q_at(positions, n=10, qid="q"):
    ranking = [f"d{i}" for i in range(1, n + 1)]
    return QueryResult(qid, ranking, frozenset(f"d{p}" for p in positions))


def run_of(*positions):
    return EvalRun([q_at(p, qid=f"q{i}") for i, p in enumerate(positions)])


def test_map_examples():
    assert compute_map(run_of([1])) == 1.0
    assert compute_map(run_of([2, 4])) == pytest.approx(0.5, abs=1e-12)
    a, b = compute_map(run_of([3])), compute_map(run_of([1, 5]))
    assert compute_map(run_of([3], [1, 5])) == pytest.approx((a + b) / 2)


def test_mrr_examples():
    assert compute_mrr(run_of([1])) == 1.0
    assert compute_mrr(run_of([2])) == 0.5
    assert compute_mrr(run_of([3, 4])) == pytest.approx(1 / 3)


def test_ndcg_examples():
    assert compute_ndcg(run_of([1, 2]), 3) == 1.0
    assert compute_ndcg(run_of([2]), 3) == pytest.approx(math.log(2) / math.log(3), abs=1e-12)
    assert compute_ndcg(run_of([2]), 3) == pytest.approx(0.6309, abs=1e-4)
    assert compute_ndcg(run_of([1]), 1) == 1.0


def test_ndcg_log_base_only_rescales():
    # per query the base cancels between DCG and ideal DCG
    r = run_of([2, 5], [3])
    assert compute_ndcg(r, 5, log_base=2) == pytest.approx(compute_ndcg(r, 5), rel=1e-12)


def test_zero_click_errors():
    with pytest.raises(ValueError):
        compute_map(run_of([]))
    with pytest.raises(ValueError):
        compute_mrr(run_of([]))
    with pytest.raises(ValueError):
        compute_ndcg(run_of([1]), 0)


def test_evaluate_excludes_no_click_queries():
    rep = evaluate(run_of([1], []))
    assert rep.values["MAP"] == 1.0 and rep.skipped["no_click"] == 1 and rep.n_queries == 2


def test_graded_ndcg():
    q = QueryResult("q", ["a", "b", "c"], frozenset({"a"}), {"a": 1, "b": 3, "c": 0})
    r = EvalRun([q])
    dcg = 1 / math.log(2) + 3 / math.log(3)
    ideal = 3 / math.log(2) + 1 / math.log(3)
    assert compute_ndcg(r, 3, gain="graded") == pytest.approx(dcg / ideal)
    skipped = {}
    zero = EvalRun([QueryResult("z", ["a"], frozenset(), {"a": 0}), q])
    assert compute_ndcg(zero, 3, gain="graded", skipped=skipped) == pytest.approx(dcg / ideal)
    assert skipped["ndcg@3"] == 1


def _random_runs(seed):
    rng = np.random.default_rng(seed)
    runs = []
    for _ in range(int(rng.integers(1, 8))):
        n = int(rng.integers(1, 11))
        k = int(rng.integers(1, min(4, n) + 1))
        runs.append(sorted(rng.choice(np.arange(1, n + 1), k, replace=False).tolist()) + [n])
    return runs


@pytest.mark.parametrize("seed", range(100))
def test_matches_brute_force(seed):
    runs = _random_runs(seed)
    native = evaluate(EvalRun([q_at(r[:-1], n=r[-1], qid=f"q{i}") for i, r in enumerate(runs)]))
    want = oracles.evaluate([r[:-1] for r in runs])
    for name, v in want.items():
        assert native.values[name] == pytest.approx(v, abs=1e-9)


positions = st.integers(1, 10).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.integers(1, n), min_size=1, max_size=min(4, n))))


@settings(max_examples=150)
@given(positions)
def test_metrics_in_unit_interval_and_swap_up(case):
    n, clicks = case
    base = evaluate(EvalRun([q_at(sorted(clicks), n)]))
    for v in base.values.values():
        assert 0 <= v <= 1 + 1e-12
    # move one click up by one slot when the slot above is not clicked
    for p in sorted(clicks):
        if p > 1 and p - 1 not in clicks:
            moved = evaluate(EvalRun([q_at(sorted((clicks - {p}) | {p - 1}), n)]))
            for name, v in base.values.items():
                assert moved.values[name] >= v - 1e-12
            break


@given(st.integers(1, 10), st.integers(1, 10))
def test_ndcg_non_decreasing_in_k_single_click(p, k):
    r = EvalRun([q_at([p])])
    assert compute_ndcg(r, k + 1) >= compute_ndcg(r, k)


def test_perfect_run():
    rep = evaluate(run_of([1, 2], [1]))
    assert all(v == 1.0 for v in rep.values.values())


def _sessions():
    out = []
    for i, n in enumerate([2, 2, 3, 5, 1]):
        out.append(Session(f"s{i}", [turn(f"s{i}q{j}", "x", [(f"d{i}{j}", "t", True)]) for j in range(1, n + 1)]))
    return out


def _run_for(sessions, rng):
    qs = []
    for s in sessions:
        for t in s.turns[1:]:
            p = int(rng.integers(1, 6))
            qs.append(QueryResult(t.query_id, [f"x{i}" for i in range(1, 6)], frozenset({f"x{p}"})))
    return EvalRun(qs)


def test_length_classes():
    assert [length_class(n) for n in (1, 2, 3, 4, 5, 9)] == ["single", "short", "medium", "medium", "long", "long"]


def test_breakdown_buckets_and_partition():
    sessions = _sessions()
    run = _run_for(sessions, np.random.default_rng(0))
    rep = breakdown(run, sessions, "length")
    assert set(rep.buckets) == {"short", "medium", "long"}
    assert rep.buckets["long"].n_queries == 4
    weighted = sum(b.values["MAP"] * b.n_queries for b in rep.buckets.values()) / rep.n_queries
    assert weighted == pytest.approx(rep.values["MAP"], rel=1e-12)
    pos = breakdown(run, sessions, "position")
    assert list(pos.buckets) == ["S2", "M2", "M3", "L2", "L3", "L4", "L5"]


def test_breakdown_all_short():
    sessions = _sessions()[:2]
    rep = breakdown(_run_for(sessions, np.random.default_rng(1)), sessions)
    assert list(rep.buckets) == ["short"]


def test_breakdown_untraceable():
    with pytest.raises(KeyError):
        breakdown(run_of([1]), _sessions())


def test_trec_round_trip(tmp_path):
    lists = [RankingList("q1", ["a", "b"], [2.5, 0.1 + 0.2]), RankingList("q2", ["c"], [-1.0])]
    export_trec_run(lists, tmp_path / "r")
    lines = (tmp_path / "r").read_text().splitlines()
    assert lines[0].split()[:4] == ["q1", "Q0", "a", "1"] and lines[1].split()[3] == "2"
    back = read_trec_run(tmp_path / "r")
    assert back["q1"].doc_ids == ["a", "b"] and back["q1"].scores == [2.5, 0.1 + 0.2]
    qrels = {"q1": {"a": 3, "b": 0}, "q2": {"c": 1}}
    export_trec_qrels(qrels, tmp_path / "q")
    assert (tmp_path / "q").read_text().splitlines()[0] == "q1 0 a 3"
    assert read_trec_qrels(tmp_path / "q") == qrels
    run = run_from_trec(back, qrels)
    assert evaluate(run).values["MRR"] == 1.0


def test_trec_depth(tmp_path):
    export_trec_run([RankingList("q", ["a", "b", "c"], [3.0, 2.0, 1.0])], tmp_path / "r", depth=2)
    assert len((tmp_path / "r").read_text().splitlines()) == 2


def test_report_outputs(tmp_path):
    rep = breakdown(_run_for(_sessions(), np.random.default_rng(2)), _sessions())
    write_report_tsv(rep, tmp_path / "m.tsv")
    rows = (tmp_path / "m.tsv").read_text().splitlines()
    assert rows[0].startswith("bucket\tn_queries\tMAP") and rows[1].startswith("all\t")
    assert "NDCG@10" in format_report(rep)
