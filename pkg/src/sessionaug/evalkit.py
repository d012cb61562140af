"""MAP / MRR / NDCG@k over click positions, session breakdowns, and TREC run/qrels files."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import SearchContext, Session
from .retrieval import RankingList


@dataclass
class QueryResult:
    query_id: str
    ranking: list[str]  # doc_ids best-first
    clicked: frozenset[str]
    relevance: dict[str, int] = field(default_factory=dict)

    @property
    def click_positions(self) -> list[int]:
        return [i for i, d in enumerate(self.ranking, start=1) if d in self.clicked]


@dataclass
class EvalRun:
    queries: list[QueryResult]

    def __len__(self) -> int:
        return len(self.queries)


@dataclass
class MetricsReport:
    values: dict[str, float]
    n_queries: int
    skipped: dict[str, int] = field(default_factory=dict)
    buckets: dict[str, "MetricsReport"] = field(default_factory=dict)


def _positions(q: QueryResult) -> list[int]:
    pos = q.click_positions
    if not pos:
        raise ValueError(f"query {q.query_id!r} has no clicked document in its ranking")
    return pos


def average_precision(q: QueryResult) -> float:
    pos = _positions(q)
    return sum(j / p for j, p in enumerate(pos, start=1)) / len(pos)


def reciprocal_rank(q: QueryResult) -> float:
    return 1.0 / _positions(q)[0]


def compute_map(run: EvalRun) -> float:
    if not run.queries:
        raise ValueError("empty run")
    return sum(average_precision(q) for q in run.queries) / len(run.queries)


def compute_mrr(run: EvalRun) -> float:
    if not run.queries:
        raise ValueError("empty run")
    return sum(reciprocal_rank(q) for q in run.queries) / len(run.queries)


def _discount(p: int, log_base: Optional[float]) -> float:
    return 1.0 / (math.log(1 + p) if log_base is None else math.log(1 + p, log_base))


def query_ndcg(q: QueryResult, k: int, gain: str = "binary_click", log_base: Optional[float] = None) -> Optional[float]:
    """NDCG@k of one query, or None when its ideal DCG is zero."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if gain == "binary_click":
        pos = q.click_positions
        dcg = sum(_discount(p, log_base) for p in pos if p <= k)
        ideal = sum(_discount(p, log_base) for p in range(1, min(len(pos), k) + 1))
    elif gain == "graded":
        gains = [q.relevance.get(d, 0) for d in q.ranking]
        dcg = sum(g * _discount(p, log_base) for p, g in enumerate(gains[:k], start=1))
        best = sorted(gains, reverse=True)[:k]
        ideal = sum(g * _discount(p, log_base) for p, g in enumerate(best, start=1))
    else:
        raise ValueError(f"unknown gain {gain!r}")
    if ideal == 0:
        return None
    return dcg / ideal


def compute_ndcg(run: EvalRun, k: int, gain: str = "binary_click", log_base: Optional[float] = None,
                 skipped: Optional[dict] = None) -> float:
    """Mean per-query NDCG@k; queries with zero ideal DCG are left out and counted in ``skipped``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    vals = []
    n_skip = 0
    for q in run.queries:
        v = query_ndcg(q, k, gain, log_base)
        if v is None:
            n_skip += 1
        else:
            vals.append(v)
    if skipped is not None:
        skipped[f"ndcg@{k}"] = n_skip
    if not vals:
        raise ValueError("no query with non-zero ideal DCG")
    return sum(vals) / len(vals)


def evaluate(run: EvalRun, ks: Sequence[int] = (1, 3, 5, 10), gain: str = "binary_click",
             log_base: Optional[float] = None) -> MetricsReport:
    """Full report; queries without clicks are excluded from MAP/MRR and counted."""
    clicked = EvalRun([q for q in run.queries if q.click_positions])
    skipped = {"no_click": len(run) - len(clicked)}
    values = {}
    if clicked.queries:
        values["MAP"] = compute_map(clicked)
        values["MRR"] = compute_mrr(clicked)
    for k in ks:
        base = clicked if gain == "binary_click" else run
        if base.queries:
            try:
                values[f"NDCG@{k}"] = compute_ndcg(base, k, gain, log_base, skipped)
            except ValueError:
                pass
    return MetricsReport(values, len(run), skipped)


# --------------------------------------------------------------------------
# Breakdowns
# --------------------------------------------------------------------------


def length_class(n_turns: int) -> str:
    if n_turns <= 1:
        return "single"
    if n_turns == 2:
        return "short"
    if n_turns <= 4:
        return "medium"
    return "long"


_PREFIX = {"single": "X", "short": "S", "medium": "M", "long": "L"}


def breakdown(run: EvalRun, sessions: Iterable[Session], mode: str = "length",
              ks: Sequence[int] = (1, 3, 5, 10), gain: str = "binary_click") -> MetricsReport:
    """Metrics per session-length class or per (length class, query position) bucket."""
    if mode not in ("length", "position"):
        raise ValueError(f"unknown breakdown mode {mode!r}")
    where: dict[str, tuple[int, int]] = {}
    for s in sessions:
        for pos, turn in enumerate(s.turns, start=1):
            where[turn.query_id] = (len(s.turns), pos)
    buckets: dict[str, list[QueryResult]] = defaultdict(list)
    for q in run.queries:
        if q.query_id not in where:
            raise KeyError(f"query {q.query_id!r} not found in any session")
        n, pos = where[q.query_id]
        cls = length_class(n)
        buckets[cls if mode == "length" else f"{_PREFIX[cls]}{pos}"].append(q)
    report = evaluate(run, ks, gain)
    for name in sorted(buckets, key=_bucket_order):
        report.buckets[name] = evaluate(EvalRun(buckets[name]), ks, gain)
    return report


def _bucket_order(name: str):
    order = ["single", "short", "medium", "long"]
    if name in order:
        return (order.index(name), 0)
    return ("XSML".index(name[0]), int(name[1:]))


# --------------------------------------------------------------------------
# Building runs and TREC I/O
# --------------------------------------------------------------------------


def run_from_rankings(rankings: Mapping[str, RankingList], contexts: Sequence[SearchContext]) -> EvalRun:
    queries = []
    for ctx in contexts:
        qid = ctx.current.query_id
        rel = {c.doc_id: c.relevance for c in ctx.current.candidates if c.relevance is not None}
        queries.append(QueryResult(qid, list(rankings[qid].doc_ids), frozenset(d.doc_id for d in ctx.clicked), rel))
    return EvalRun(queries)


def export_trec_run(rankings: Iterable[RankingList], path: str | Path, tag: str = "sessionaug",
                    depth: Optional[int] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rl in rankings:
            n = len(rl.doc_ids) if depth is None else min(depth, len(rl.doc_ids))
            for rank in range(n):
                fh.write(f"{rl.query_id} Q0 {rl.doc_ids[rank]} {rank + 1} {rl.scores[rank]!r} {tag}\n")


def export_trec_qrels(qrels: Mapping[str, Mapping[str, int]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, docs in qrels.items():
            for doc_id, rel in docs.items():
                fh.write(f"{qid} 0 {doc_id} {rel}\n")


def read_trec_run(path: str | Path) -> dict[str, RankingList]:
    rows: dict[str, list[tuple[int, str, float]]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, _, doc_id, rank, sc, _tag = line.split()
            rows[qid].append((int(rank), doc_id, float(sc)))
    out = {}
    for qid, items in rows.items():
        items.sort()
        out[qid] = RankingList(qid, [d for _, d, _ in items], [s for _, _, s in items])
    return out


def read_trec_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, _, doc_id, rel = line.split()
            out[qid][doc_id] = int(rel)
    return dict(out)


def run_from_trec(rankings: Mapping[str, RankingList], qrels: Mapping[str, Mapping[str, int]]) -> EvalRun:
    """Clicks are qrels entries with rel > 0; graded labels are kept for graded NDCG."""
    queries = []
    for qid, labels in qrels.items():
        ranking = list(rankings[qid].doc_ids) if qid in rankings else []
        queries.append(QueryResult(qid, ranking, frozenset(d for d, r in labels.items() if r > 0), dict(labels)))
    return EvalRun(queries)


def format_report(report: MetricsReport, title: str = "metrics") -> str:
    names = list(report.values)
    rows = [("all", report.n_queries, report.values)]
    rows += [(b, r.n_queries, r.values) for b, r in report.buckets.items()]
    header = ["bucket", "n"] + names
    body = [[b, str(n)] + [f"{v.get(m, float('nan')):.4f}" for m in names] for b, n, v in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    lines = [title, fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
    return "\n".join(lines)


def write_report_tsv(report: MetricsReport, path: str | Path) -> None:
    names = list(report.values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["bucket", "n_queries"] + names) + "\n")
        rows = [("all", report)] + list(report.buckets.items())
        for name, r in rows:
            fh.write("\t".join([name, str(r.n_queries)] + [repr(r.values.get(m, float("nan"))) for m in names]) + "\n")
