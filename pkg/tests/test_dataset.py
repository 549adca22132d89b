import json
from datetime import timedelta

import pytest
from hypothesis import given, settings, strategies as st

from sipsim.dataset import (
    ScriptedTurn,
    compute_stats,
    corpus_lines,
    load_event,
    parse_event_lines,
    synth_event,
)
from sipsim.domain import Stance, depth_of
from sipsim.errors import EmptyCorpus, IntegrityError, SchemaError

from conftest import ts, write_jsonl


def test_load_three_item_fixture(three_item_event):
    corpus = load_event(three_item_event)
    assert len(corpus.items) == 3
    assert [r.item_id for r in corpus.roots] == ["p1"]
    assert corpus.event_id == "event"
    assert ("u1", "u2") in corpus.follows


def test_stats_on_three_item_fixture(three_item_event):
    s = compute_stats(load_event(three_item_event))
    # hand computation: r1 replies to the root, r2 to r1; spans p1->r1 2h, r1->r2 2h
    assert s.first_comments == 1
    assert s.nested_comments == 1
    assert s.time_span == timedelta(hours=4)
    assert s.avg_span == timedelta(hours=2)
    assert s.avg_span_defined
    assert s.avg_depth == pytest.approx(1.5)
    assert s.avg_length == pytest.approx((len("Really?") + len("Yes")) / 2)
    assert s.total_users == 2


def test_stats_root_only(tmp_path):
    path = write_jsonl(tmp_path / "e.jsonl", [
        {"kind": "user", "user_id": "u1", "name": "Ana"},
        {"kind": "item", "item_id": "p1", "author_id": "u1", "timestamp": ts(0), "text": "x"},
    ])
    s = compute_stats(load_event(path))
    assert (s.first_comments, s.nested_comments) == (0, 0)
    assert s.avg_span == timedelta(0) and not s.avg_span_defined


def test_stats_active_threshold(tmp_path):
    path = write_jsonl(tmp_path / "e.jsonl", [
        {"kind": "user", "user_id": "u1", "name": "Ana"},
        {"kind": "user", "user_id": "u2", "name": "Ben"},
        {"kind": "user", "user_id": "u3", "name": "Cy"},
        {"kind": "item", "item_id": "p1", "author_id": "u3", "timestamp": ts(0), "text": "x"},
        {"kind": "item", "item_id": "c1", "author_id": "u1", "parent_id": "p1", "timestamp": ts(1), "text": "a"},
        {"kind": "item", "item_id": "c2", "author_id": "u2", "parent_id": "p1", "timestamp": ts(2), "text": "b"},
    ])
    s = compute_stats(load_event(path))
    assert s.active_users == 0 and s.avg_freq == 0


def test_empty_corpus_stats():
    with pytest.raises(EmptyCorpus):
        compute_stats(parse_event_lines([]))


def test_missing_item_id_reports_line(tmp_path, three_item_records):
    del three_item_records[3]["item_id"]
    with pytest.raises(SchemaError) as err:
        load_event(write_jsonl(tmp_path / "e.jsonl", three_item_records))
    assert err.value.line == 4


def test_unknown_parent_is_integrity_error(tmp_path, three_item_records):
    three_item_records[3]["parent_id"] = "nope"
    with pytest.raises(IntegrityError):
        load_event(write_jsonl(tmp_path / "e.jsonl", three_item_records))


def test_unknown_field_strict_and_lenient(tmp_path, three_item_records):
    three_item_records[2]["score"] = 12
    path = write_jsonl(tmp_path / "e.jsonl", three_item_records)
    with pytest.raises(SchemaError):
        load_event(path)
    assert len(load_event(path, strict=False).items) == 3


def test_bad_json_and_unknown_kind():
    with pytest.raises(SchemaError) as err:
        parse_event_lines(['{"kind": "user", "user_id": "u", "name": "n"}', "{oops"])
    assert err.value.line == 2
    with pytest.raises(SchemaError):
        parse_event_lines(['{"kind": "vote"}'])


def test_corpus_lines_round_trip():
    corpus = synth_event(3, 4, 5)
    again = parse_event_lines(corpus_lines(corpus))
    assert again == corpus


def test_synth_single_post():
    corpus = synth_event(1, 2, 1, [ScriptedTurn(0, 0, "post", stance=Stance.SUPPORT)])
    assert len(corpus.items) == 1
    item = corpus.items[0]
    assert item.is_root and item.labels.stance is Stance.SUPPORT and item.step == 0


def test_synth_is_deterministic_and_seed_sensitive():
    assert synth_event(1, 5, 4) == synth_event(1, 5, 4)
    s1 = [it.labels.stance for it in synth_event(1, 5, 4).items]
    s2 = [it.labels.stance for it in synth_event(2, 5, 4).items]
    assert s1 != s2


def test_synth_rejects_reply_without_earlier_item():
    with pytest.raises(ValueError):
        synth_event(1, 2, 2, [ScriptedTurn(0, 0, "reply")])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_agents=st.integers(1, 6), n_steps=st.integers(1, 5))
def test_synth_corpora_are_valid_forests(seed, n_agents, n_steps):
    corpus = synth_event(seed, n_agents, n_steps)
    index = corpus.by_id()
    for it in corpus.items:
        assert depth_of(it, index) >= 0
        if it.parent_id:
            assert index[it.parent_id].step < it.step
        assert it.timestamp == corpus.items[0].timestamp - timedelta(hours=corpus.items[0].step) + timedelta(hours=it.step)


def test_dump_uses_sorted_keys():
    line = corpus_lines(synth_event(0, 2, 1))[-1]
    assert list(json.loads(line)) == sorted(json.loads(line))
