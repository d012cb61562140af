"""Session click-log data model, JSONL ingestion and search-context derivation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

EMPTY_QUERY = "[empty_q]"
EMPTY_DOC = "[empty_d]"


class LogFormatError(ValueError):
    """Raised when a session log cannot be parsed or violates the record schema."""


@dataclass
class Document:
    doc_id: str
    title_text: str
    title_tokens: list[str] = field(default_factory=list)


@dataclass
class Candidate:
    document: Document
    clicked: bool
    relevance: Optional[int] = None

    @property
    def doc_id(self) -> str:
        return self.document.doc_id


@dataclass
class QueryTurn:
    query_id: str
    text: str
    candidates: list[Candidate]
    tokens: list[str] = field(default_factory=list)

    @property
    def first_click(self) -> Optional[str]:
        for cand in self.candidates:
            if cand.clicked:
                return cand.doc_id
        return None

    @property
    def first_click_document(self) -> Optional[Document]:
        for cand in self.candidates:
            if cand.clicked:
                return cand.document
        return None


@dataclass
class Session:
    session_id: str
    turns: list[QueryTurn]


@dataclass
class SearchContext:
    """History of (query, first-clicked document) pairs plus the current turn."""

    session_id: str
    position: int  # 1-based index of the current turn in its session
    history: list[tuple[QueryTurn, Document]]
    current: QueryTurn
    clicked: list[Document]
    skipped: list[Document]

    @property
    def key(self) -> str:
        return f"{self.session_id}/{self.current.query_id}"


# --------------------------------------------------------------------------
# JSONL I/O
# --------------------------------------------------------------------------


def _parse_session(record: dict, docs: dict[str, Document], lineno: int) -> Session:
    try:
        session_id = record["session_id"]
        raw_turns = record["turns"]
    except (KeyError, TypeError) as exc:
        raise LogFormatError(f"line {lineno}: missing field {exc}") from None
    if not isinstance(session_id, str) or not session_id:
        raise LogFormatError(f"line {lineno}: session_id must be a non-empty string")
    if not isinstance(raw_turns, list):
        raise LogFormatError(f"line {lineno}: turns must be a list")

    turns = []
    for t in raw_turns:
        try:
            query_id, text, raw_cands = t["query_id"], t["text"], t["candidates"]
        except (KeyError, TypeError) as exc:
            raise LogFormatError(f"line {lineno}: turn missing field {exc}") from None
        if not raw_cands:
            raise LogFormatError(f"line {lineno}: turn {query_id!r} has zero candidates")
        cands = []
        for c in raw_cands:
            try:
                doc_id, title, clicked = c["doc_id"], c["title"], c["clicked"]
            except (KeyError, TypeError) as exc:
                raise LogFormatError(f"line {lineno}: candidate missing field {exc}") from None
            rel = c.get("relevance")
            if rel is not None and (not isinstance(rel, int) or not 0 <= rel <= 4):
                raise LogFormatError(f"line {lineno}: relevance {rel!r} outside [0, 4]")
            if not isinstance(doc_id, str) or not doc_id:
                raise LogFormatError(f"line {lineno}: doc_id must be a non-empty string")
            doc = docs.get(doc_id)
            if doc is None:
                doc = docs[doc_id] = Document(doc_id, title)
            elif doc.title_text != title:
                raise LogFormatError(f"line {lineno}: doc {doc_id!r} has conflicting titles")
            cands.append(Candidate(doc, bool(clicked), rel))
        turns.append(QueryTurn(query_id, text, cands))
    return Session(session_id, turns)


def load_log(path: str | Path, format: str = "jsonl") -> list[Session]:
    """Read sessions from a JSONL log, one session per line, in file order."""
    if format != "jsonl":
        raise ValueError(f"unsupported log format {format!r}")
    sessions: list[Session] = []
    docs: dict[str, Document] = {}
    seen_sessions: set[str] = set()
    seen_queries: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"line {lineno}: {exc.msg}") from None
            session = _parse_session(record, docs, lineno)
            if session.session_id in seen_sessions:
                raise LogFormatError(f"line {lineno}: duplicate session_id {session.session_id!r}")
            seen_sessions.add(session.session_id)
            for turn in session.turns:
                if turn.query_id in seen_queries:
                    raise LogFormatError(f"line {lineno}: duplicate query_id {turn.query_id!r}")
                seen_queries.add(turn.query_id)
            sessions.append(session)
    return sessions


def session_to_record(session: Session) -> dict:
    return {
        "session_id": session.session_id,
        "turns": [
            {
                "query_id": turn.query_id,
                "text": turn.text,
                "candidates": [
                    {
                        "doc_id": c.doc_id,
                        "title": c.document.title_text,
                        "clicked": c.clicked,
                        "relevance": c.relevance,
                    }
                    for c in turn.candidates
                ],
            }
            for turn in session.turns
        ],
    }


def dumps_session(session: Session) -> str:
    # canonical form: alphabetical keys, no ASCII escaping
    return json.dumps(session_to_record(session), sort_keys=True, ensure_ascii=False)


def write_log(sessions: Iterable[Session], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for session in sessions:
            fh.write(dumps_session(session))
            fh.write("\n")


def corpus_documents(sessions: Iterable[Session]) -> dict[str, Document]:
    """All distinct documents of the log keyed by doc_id, in first-seen order."""
    docs: dict[str, Document] = {}
    for session in sessions:
        for turn in session.turns:
            for cand in turn.candidates:
                docs.setdefault(cand.doc_id, cand.document)
    return docs


# --------------------------------------------------------------------------
# Context derivation
# --------------------------------------------------------------------------


def derive_contexts(sessions: Iterable[Session], require_history: bool = True) -> list[SearchContext]:
    """Build one SearchContext per clicked turn.

    History pairs use the first click of each earlier turn. A turn is
    skipped when it has no click or when any earlier turn of its session
    lacks a click; with ``require_history`` the first turn is skipped too.
    """
    contexts = []
    skipped = 0
    for session in sessions:
        history: list[tuple[QueryTurn, Document]] = []
        broken = False
        for pos, turn in enumerate(session.turns, start=1):
            first = turn.first_click_document
            usable = first is not None and not broken and (pos >= 2 or not require_history)
            if usable:
                clicked = [c.document for c in turn.candidates if c.clicked]
                skipped_docs = [c.document for c in turn.candidates if not c.clicked]
                contexts.append(
                    SearchContext(session.session_id, pos, list(history), turn, clicked, skipped_docs)
                )
            else:
                skipped += 1
            if first is None:
                broken = True
            else:
                history.append((turn, first))
    if skipped:
        logger.info("derive_contexts: skipped %d turns", skipped)
    return contexts
