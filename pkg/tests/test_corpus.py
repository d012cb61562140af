import json

import pytest
from hypothesis import given, settings, strategies as st

from sessionaug.corpus import (LogFormatError, Session, derive_contexts, dumps_session, load_log,
                               write_log)
from conftest import burlington_session, turn


def _write(tmp_path, lines):
    p = tmp_path / "log.jsonl"
    p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return p


def test_load_one_session_two_turns(tmp_path):
    p = tmp_path / "log.jsonl"
    write_log([burlington_session()], p)
    sessions = load_log(p)
    assert len(sessions) == 1
    assert len(sessions[0].turns) == 2
    assert sessions[0].turns[0].tokens == []


def test_empty_file(tmp_path):
    assert load_log(_write(tmp_path, [])) == []


def test_malformed_line_names_line_number(tmp_path):
    with pytest.raises(LogFormatError, match="line 1"):
        load_log(_write(tmp_path, ["{not json"]))


def test_error_reports_later_line(tmp_path):
    good = dumps_session(burlington_session())
    with pytest.raises(LogFormatError, match="line 2"):
        load_log(_write(tmp_path, [good, '{"session_id": "x"}']))


def test_duplicate_session_id(tmp_path):
    line = dumps_session(burlington_session())
    with pytest.raises(LogFormatError, match="duplicate session_id"):
        load_log(_write(tmp_path, [line, line]))


def test_zero_candidates(tmp_path):
    rec = {"session_id": "s", "turns": [{"query_id": "q", "text": "x", "candidates": []}]}
    with pytest.raises(LogFormatError, match="zero candidates"):
        load_log(_write(tmp_path, [json.dumps(rec)]))


def test_relevance_out_of_range(tmp_path):
    rec = {"session_id": "s", "turns": [{"query_id": "q", "text": "x", "candidates": [
        {"doc_id": "d", "title": "t", "clicked": True, "relevance": 5}]}]}
    with pytest.raises(LogFormatError, match="relevance"):
        load_log(_write(tmp_path, [json.dumps(rec)]))


def test_round_trip_byte_identical(tmp_path):
    p = tmp_path / "a.jsonl"
    q = tmp_path / "b.jsonl"
    sess = burlington_session()
    sess.turns[1].candidates[0].relevance = 3
    write_log([sess, Session("S9", [turn("q9", "[empty_q]", [("z", "[empty_d]", False)])])], p)
    write_log(load_log(p), q)
    assert p.read_bytes() == q.read_bytes()


def _two_turns(c1, c2):
    return Session("s", [turn("a", "first", [("x", "x doc", c1), ("y", "y doc", False)]),
                         turn("b", "second", [("z", "z doc", c2), ("w", "w doc", False)])])


def test_derive_with_history():
    ctx = derive_contexts([_two_turns(True, True)], require_history=True)
    assert len(ctx) == 1
    assert ctx[0].current.query_id == "b"
    assert [(q.query_id, d.doc_id) for q, d in ctx[0].history] == [("a", "x")]


def test_derive_without_history():
    assert len(derive_contexts([_two_turns(True, True)], require_history=False)) == 2


def test_clickless_history_turn_drops_followers():
    assert derive_contexts([_two_turns(False, True)], require_history=False) == []


def test_burlington_context():
    ctx = derive_contexts([burlington_session()], require_history=True)
    assert len(ctx) == 1
    c = ctx[0]
    assert [(q.text, d.title_text) for q, d in c.history] == [("racine county history", "racine county wi home")]
    assert c.current.text == "burlington wisconsin"
    assert [d.title_text for d in c.clicked] == ["burlington wi official website"]
    assert len(c.skipped) == 4


def test_first_click_is_impression_order():
    t = turn("q", "x", [("a", "a", False), ("b", "b", True), ("c", "c", True)])
    assert t.first_click == "b"


clicks = st.lists(st.lists(st.booleans(), min_size=1, max_size=4), min_size=1, max_size=5)


def _random_session(i, pattern):
    turns = []
    for j, row in enumerate(pattern):
        turns.append(turn(f"s{i}q{j}", f"query {j}", [(f"d{i}{j}{k}", f"doc {k}", c) for k, c in enumerate(row)]))
    return Session(f"s{i}", turns)


@settings(max_examples=60, deadline=None)
@given(st.lists(clicks, min_size=1, max_size=4))
def test_context_invariants(patterns):
    sessions = [_random_session(i, p) for i, p in enumerate(patterns)]
    strict = derive_contexts(sessions, True)
    loose = derive_contexts(sessions, False)
    assert {c.key for c in strict} <= {c.key for c in loose}
    for c in loose:
        for q, d in c.history:
            assert q.first_click == d.doc_id
        ids = [x.doc_id for x in c.current.candidates]
        assert sorted(d.doc_id for d in c.clicked + c.skipped) == sorted(ids)
        assert not {d.doc_id for d in c.clicked} & {d.doc_id for d in c.skipped}
        assert c.clicked
