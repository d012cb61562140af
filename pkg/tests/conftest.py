import numpy as np
import pytest

from sessionaug.corpus import Candidate, Document, QueryTurn, Session
from sessionaug.textproc import attach_tokens


def turn(query_id, text, cands):
    """cands: list of (doc_id, title, clicked) or (doc_id, title, clicked, relevance)."""
    out = []
    for c in cands:
        rel = c[3] if len(c) > 3 else None
        out.append(Candidate(Document(c[0], c[1]), c[2], rel))
    return QueryTurn(query_id, text, out)


def burlington_session():
    """The AOL example session: a Racine query followed by a Burlington query."""
    q1 = turn("q1", "racine county history", [
        ("d1", "racine county wi home", True),
        ("d9", "racine art museum", False),
    ])
    q2 = turn("q2", "burlington wisconsin", [
        ("dc", "burlington wi official website", True),
        ("s1", "burlington vermont news", False),
        ("s2", "burlington coat factory", False),
        ("s3", "wisconsin dells resorts", False),
        ("s4", "burlington northern railroad", False),
    ])
    return Session("S1", [q1, q2])


def other_sessions():
    return [
        Session("S2", [turn("q3", "laugh factory nyc", [("e1", "laugh factory comedy club", True),
                                                          ("e2", "nyc comedy shows", False)])]),
        Session("S3", [turn("q4", "burlington county jobs", [("f1", "burlington county nj careers", True),
                                                               ("dc", "burlington wi official website", False)])]),
        Session("S4", [turn("q5", "school supplies", [("g1", "school supply store", True)]),
                       turn("q6", "becker furniture", [("g2", "becker furniture world", True)])]),
    ]


@pytest.fixture
def table2_log():
    sessions = [burlington_session()] + other_sessions()
    attach_tokens(sessions)
    return sessions


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
