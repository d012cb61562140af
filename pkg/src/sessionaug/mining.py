"""Ambiguous-query mining from windows of negative documents around clicked documents."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import SearchContext, Session
from .retrieval import RankingList

BANDS = ("low", "medium", "high")


@dataclass
class NegativeWindow:
    owner: str  # query_id of q_c'
    session_id: str
    query_tokens: tuple[str, ...]
    center: str  # owner's first click
    center_rank: int  # 1-based
    members: list[tuple[str, int]]  # (doc_id, window_pos), top-down
    w_size: int
    member_ranks: list[int]  # global 1-based ranks, parallel to members


@dataclass
class AmbiguousMatch:
    source: str  # query_id of q_c
    matched: str  # query_id of q_c'
    pos: int
    ambiguity: int
    margin: float


def _window_bounds(center_rank: int, n: int, w_size: int) -> tuple[int, int]:
    if w_size < 2 or w_size % 2:
        raise ValueError("w_size must be an even integer >= 2")
    half = w_size // 2
    return max(1, center_rank - half), min(n, center_rank + half)


def extract_window(ranking: RankingList, center_doc: str, w_size: int, *, session_id: str = "",
                   query_tokens: Sequence[str] = ()) -> NegativeWindow:
    """Documents within ``w_size / 2`` ranks of ``center_doc``, excluding it, clipped to the list."""
    try:
        center_rank = ranking.doc_ids.index(center_doc) + 1
    except ValueError:
        raise KeyError(f"center doc {center_doc!r} not in ranking of {ranking.query_id!r}") from None
    lo, hi = _window_bounds(center_rank, len(ranking.doc_ids), w_size)
    ranks = [r for r in range(lo, hi + 1) if r != center_rank]
    members = [(ranking.doc_ids[r - 1], i) for i, r in enumerate(ranks, start=1)]
    return NegativeWindow(ranking.query_id, session_id, tuple(query_tokens), center_doc,
                          center_rank, members, w_size, ranks)


def build_windows(sessions: Iterable[Session], doc_ids: Sequence[str], order: np.ndarray,
                  query_ids: Sequence[str], w_size: int) -> list[NegativeWindow]:
    """Windows for every clicked turn from a precomputed ranking matrix.

    ``order[i]`` holds column indices into ``doc_ids`` best-first for
    ``query_ids[i]``. Turns without a click own no window.
    """
    row_of = {q: i for i, q in enumerate(query_ids)}
    col_of = {d: j for j, d in enumerate(doc_ids)}
    windows = []
    for session in sessions:
        for turn in session.turns:
            center = turn.first_click
            if center is None:
                continue
            row = order[row_of[turn.query_id]]
            center_rank = int(np.flatnonzero(row == col_of[center])[0]) + 1
            lo, hi = _window_bounds(center_rank, len(row), w_size)
            ranks = [r for r in range(lo, hi + 1) if r != center_rank]
            members = [(doc_ids[row[r - 1]], i) for i, r in enumerate(ranks, start=1)]
            windows.append(NegativeWindow(turn.query_id, session.session_id, tuple(turn.tokens),
                                          center, center_rank, members, w_size, ranks))
    return windows


def ambiguous_margin(pos: int, w_size: int, mean_margin: float) -> float:
    """Margin that grows linearly with the window position of the clicked document."""
    if not 1 <= pos <= w_size:
        raise ValueError(f"pos {pos} outside [1, {w_size}]")
    if mean_margin <= 0:
        raise ValueError("mean_margin must be positive")
    return (pos / w_size) * 2 * mean_margin


def nominal_position(offset: int, w_size: int) -> int:
    """Position the member would have in an unclipped window, from its signed rank offset."""
    half = w_size // 2
    return offset + half + 1 if offset < 0 else offset + half


def band_of(offset: int, w_size: int) -> str:
    """Thirds of the unclipped window: high (top), medium (around the center), low (bottom)."""
    npos = nominal_position(offset, w_size)
    if 3 * npos <= w_size:
        return "high"
    if 3 * npos > 2 * w_size:
        return "low"
    return "medium"


class WindowIndex:
    """doc_id -> windows containing it, for fast mining."""

    def __init__(self, windows: Sequence[NegativeWindow]):
        self.windows = list(windows)
        self.by_doc: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for wi, win in enumerate(self.windows):
            for mi, (doc_id, _) in enumerate(win.members):
                self.by_doc[doc_id].append((wi, mi))


def mine_ambiguous(context: SearchContext, windows: WindowIndex | Sequence[NegativeWindow], k: int = 4,
                   band: str = "medium", mean_margin: float = 0.2) -> list[AmbiguousMatch]:
    """Up to ``k`` queries from other sessions whose window contains the context's first click.

    Matches are restricted to ``band`` and ordered by ascending rank
    distance between the two clicked documents, then query_id. Queries with
    the same text as the current query are not candidates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if band not in BANDS:
        raise ValueError(f"band must be one of {BANDS}")
    if not isinstance(windows, WindowIndex):
        windows = WindowIndex(windows)
    d_c = context.current.first_click
    q_tokens = tuple(context.current.tokens)
    found = []
    for wi, mi in windows.by_doc.get(d_c, ()):
        win = windows.windows[wi]
        if win.session_id == context.session_id or win.owner == context.current.query_id:
            continue
        if win.query_tokens == q_tokens:
            continue
        offset = win.member_ranks[mi] - win.center_rank
        if band_of(offset, win.w_size) != band:
            continue
        pos = win.members[mi][1]
        found.append(AmbiguousMatch(context.current.query_id, win.owner, pos, abs(offset),
                                    ambiguous_margin(pos, win.w_size, mean_margin)))
    found.sort(key=lambda m: (m.ambiguity, m.matched))
    return found[:k]


def mine_all(contexts: Sequence[SearchContext], windows: Sequence[NegativeWindow], k: int = 4,
             band: str = "medium", mean_margin: float = 0.2) -> dict[str, list[AmbiguousMatch]]:
    """Matches for every context, keyed by the current query_id."""
    index = WindowIndex(windows)
    return {c.current.query_id: mine_ambiguous(c, index, k, band, mean_margin) for c in contexts}


def write_matches(matches: Mapping[str, Sequence[AmbiguousMatch]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["source_query_id", "matched_query_id", "pos", "ambiguity", "margin"])
        for ms in matches.values():
            for m in ms:
                w.writerow([m.source, m.matched, m.pos, m.ambiguity, repr(m.margin)])


def read_matches(path: str | Path) -> dict[str, list[AmbiguousMatch]]:
    out: dict[str, list[AmbiguousMatch]] = defaultdict(list)
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            out[row["source_query_id"]].append(AmbiguousMatch(
                row["source_query_id"], row["matched_query_id"], int(row["pos"]),
                int(row["ambiguity"]), float(row["margin"])))
    return dict(out)
