from datetime import timedelta

import pytest

from sipsim.dataset import EventCorpus, ScriptedTurn, synth_event
from sipsim.domain import ContentItem, Labels, Stance, Taxonomy
from sipsim.engine import SimulationTrace, TraceRecord
from sipsim.errors import EmptyInput, TaxonomyMismatch
from sipsim.evaluate import EvalReport, assign_steps, evaluate, report_rows
from sipsim.replay import STANCE_CYCLE, flip_every, replay_items

from conftest import T0, replay_run


def rec(agent, step, stance, kind="post", content="other", emotion="neutral"):
    action = {"post": 'post(content="x")', "nothing": "do_nothing()"}[kind]
    return TraceRecord(step, agent, None, action, Labels(Stance(stance), content, emotion).to_dict(), "ok")


def test_assign_steps_binning():
    items = [ContentItem(f"i{h}", "u", "x", T0 + timedelta(hours=h)) for h in (0, 1, 5, 9, 10)]
    corpus = EventCorpus("e", items, [], [])
    assert assign_steps(corpus, 5) == {"i0": 0, "i1": 0, "i5": 2, "i9": 4, "i10": 4}


def test_extreme_fixture():
    corpus = synth_event(0, 3, 1, [ScriptedTurn(0, i, stance="neutral") for i in range(3)])
    trace = SimulationTrace([rec(a, 0, "support") for a in ("a000", "a001", "a002")])
    r = evaluate(trace, corpus)
    assert r.propagation["delta_bias"] == [1.0] and r.propagation["delta_div"] == [0.0]
    assert r.alignment["stance"]["accuracy"] == 0


def test_empty_trace():
    with pytest.raises(EmptyInput):
        evaluate(SimulationTrace([]), synth_event(0, 2, 1))


def test_taxonomy_mismatch():
    corpus = synth_event(0, 1, 1, [ScriptedTurn(0, 0, stance="support")])
    trace = SimulationTrace([rec("a000", 0, "support", content="meme")])
    with pytest.raises(TaxonomyMismatch):
        evaluate(trace, corpus, taxonomy=Taxonomy())


def test_steps_missing_on_one_side_are_skipped():
    corpus = synth_event(0, 2, 2, [ScriptedTurn(0, 0, stance="support")])
    trace = SimulationTrace([rec("a000", 0, "support"), rec("a001", 1, "oppose")])
    r = evaluate(trace, corpus)
    assert r.propagation["steps"] == [0] and r.propagation["skipped_steps"] == [1]
    # a001 acted at step 1 while the real user did nothing there
    cm = r.alignment["behavior"]["confusion"]
    labels = cm["labels"]
    assert cm["counts"][labels.index("nothing")][labels.index("post")] == 1


def test_closed_loop_replay():
    corpus = synth_event(11, 6, 5)
    r = evaluate(replay_run(corpus, 5), corpus)
    assert r.propagation["mean"] == {"delta_bias": 0.0, "delta_div": 0.0}
    assert r.propagation["dtw"] == 0
    for dim in ("stance", "content", "emotion", "behavior"):
        assert r.alignment[dim]["macro"]["f1"] == 1.0
    assert r.alignment["action_frequency"]["l1"] == 0


def test_flip_matches_analytic_confusion():
    corpus = synth_event(4, 5, 4)
    r = evaluate(replay_run(corpus, 4, flip=flip_every(5)), corpus)
    expected = {}
    for i, it in enumerate(replay_items(corpus.items)):
        true = it.labels.stance
        pred = STANCE_CYCLE[true] if i % 5 == 0 else true
        expected[(true.value, pred.value)] = expected.get((true.value, pred.value), 0) + 1
    cm = r.alignment["stance"]["confusion"]
    for i, t in enumerate(cm["labels"]):
        for j, p in enumerate(cm["labels"]):
            assert cm["counts"][i][j] == expected.get((t, p), 0)
    assert r.alignment["stance"]["accuracy"] == pytest.approx(0.8)


def test_report_round_trip(tmp_path):
    corpus = synth_event(2, 3, 3)
    report = evaluate(replay_run(corpus, 3), corpus)
    report.dump(tmp_path / "r.json")
    back = EvalReport.load(tmp_path / "r.json")
    assert back.to_dict() == report.to_dict()
    rows = report_rows("x", back)
    assert {"run_id": "x", "section": "propagation", "metric": "dtw", "value": 0.0} in rows
