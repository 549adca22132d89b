import json
import random
import re
from collections import Counter
from datetime import timedelta

import pytest

from sipsim.agent import INVALID_TARGET, TableAnnotator
from sipsim.backend import MockBackend, ScriptEntry
from sipsim.dataset import EventCorpus, sim_item_id, synth_event
from sipsim.domain import DEFAULT_ORIGIN, AgentProfile, ContentItem, Labels, Stance
from sipsim.engine import (
    EngineConfig,
    SimulationTrace,
    build_feed,
    collect_notifications,
    construct_environment,
    initialize,
    run,
    step,
)
from sipsim.errors import EmptyCorpus, ScriptMiss, SystemicBackendFailure, UnknownAgent

from conftest import IDLE, SIP_TEXT, scripted

SEQ = EngineConfig(max_parallel=1)


def act(text):
    return f"[OPTION 1] Thought: [Goal] act → Action: {text}"


def corpus(n=2, follows=(("u1", "u0"),), items=()):
    users = [AgentProfile(f"u{i}", f"User {i}") for i in range(n)]
    return EventCorpus("t", list(items), users, list(follows))


def root(iid="p0", author="u0", hours=0):
    return ContentItem(iid, author, f"root {iid}", DEFAULT_ORIGIN + timedelta(hours=hours))


def world(c, cfg=SEQ):
    return initialize(construct_environment(c, cfg), cfg)


def backend(*entries):
    return scripted([("*", "*", "SipAnalysis", SIP_TEXT), ("*", "*", "ActionSelect", IDLE), *entries])


# --- construction / initialization -----------------------------------------

def test_construct_small():
    w = construct_environment(corpus(items=[root()]))
    assert len(w.items) == 1 and w.items["p0"].step == 0
    assert w.graph.follows == {("u1", "u0")}
    assert w.clock.step == 0


def test_construct_empty():
    with pytest.raises(EmptyCorpus):
        construct_environment(EventCorpus("e", [], [], []))


def test_construct_degree_sequence():
    c = synth_event(5, 100, 1, script=[])
    w = construct_environment(c)
    expected = Counter(a for a, _ in c.follows)
    assert w.graph.out_degrees() == {u.agent_id: expected.get(u.agent_id, 0) for u in c.users}


def test_initialize_precedence_and_distribution():
    users = [AgentProfile("a", "A", initial_stance=Stance.OPPOSE, initial_emotion="negative"), AgentProfile("b", "B")]
    c = EventCorpus("e", [], users, [])
    w = world(c, EngineConfig(stance_distribution={"support": 1.0}))
    assert w.agents["a"].stance is Stance.OPPOSE and w.agents["a"].emotion == "negative"
    assert w.agents["b"].stance is Stance.SUPPORT


def test_initialize_seeded():
    c = synth_event(1, 30, 1, script=[])
    cfg = EngineConfig(seed=4, stance_distribution={"support": 0.5, "oppose": 0.5})
    s1 = [st.stance for st in world(c, cfg).agents.values()]
    s2 = [st.stance for st in world(c, cfg).agents.values()]
    assert s1 == s2 and set(s1) == {Stance.SUPPORT, Stance.OPPOSE}


# --- stepping ---------------------------------------------------------------

def test_do_nothing_step():
    w = world(corpus(n=1, follows=()))
    items_before = dict(w.items)
    step(w, backend(), SEQ)
    assert w.items == items_before and w.clock.step == 1
    assert [(e.step, e.agent_id, e.action) for e in w.event_log] == [(0, "u0", "do_nothing()")]


def test_post_step_creates_item():
    w = world(corpus(n=1, follows=()))
    step(w, backend(("u0", 0, "ActionSelect", act('post(content="hello")'))), SEQ)
    item = w.items[sim_item_id(0, "u0")]
    assert item.author_id == "u0" and item.text == "hello" and item.step == 0
    assert item.timestamp == DEFAULT_ORIGIN


def test_follower_replies_next_step():
    pid = sim_item_id(0, "u0")
    b = backend(
        ("u0", 0, "ActionSelect", act('post(content="A says hi")')),
        ("u1", 1, "ActionSelect", act(f'reply(content="hi back", author="u0", original_tweet_id="{pid}")')),
    )
    w, trace = run(world(corpus()), b, 2, SEQ)
    seen = [c for c in b.calls if c.agent_id == "u1" and c.step == 1 and c.template_id == "SipAnalysis"][0]
    assert pid in seen.messages[0].content
    assert w.items[sim_item_id(1, "u1")].parent_id == pid
    # u0 gets exactly one notification for the reply
    notes = collect_notifications(w, "u0", 1)
    assert [(n.kind, n.actor_id, n.item_id) for n in notes] == [("reply", "u1", pid)]


def test_like_and_retweet():
    w = world(corpus(items=[root()]))
    b = backend(
        ("u1", 0, "ActionSelect", act('like(item_id="p0")')),
        ("u0", 1, "ActionSelect", act('retweet(content="again", author="u0", original_tweet_id="p0", original_tweet="root p0")')),
    )
    run(w, b, 2, SEQ)
    assert w.likes == {("u1", "p0"): 0}
    rt = w.items[sim_item_id(1, "u0")]
    assert rt.quoted_id == "p0" and rt.kind == "retweet"
    assert [n.kind for n in collect_notifications(w, "u0", 0)] == ["like"]


def test_run_rejects_zero_steps():
    with pytest.raises(ValueError):
        run(world(corpus()), backend(), 0)


def test_three_agents_seven_steps():
    c = corpus(n=3, follows=())
    _, trace = run(world(c), backend(), 7, SEQ)
    assert len(trace.records) <= 21
    assert [(r.step, r.agent_id) for r in trace.records] == sorted((r.step, r.agent_id) for r in trace.records)


def _random_run(seed, max_parallel):
    c = synth_event(seed, 6, 1, script=[])
    rng = random.Random(seed)
    entries = []
    for t in range(5):
        for u in c.users:
            if rng.random() < 0.5:
                entries.append((u.agent_id, t, "ActionSelect", act(f'post(content="{u.agent_id} at {t}")')))
    cfg = EngineConfig(seed=seed, max_parallel=max_parallel)
    return run(world(c, cfg), backend(*entries), 5, cfg)


def test_determinism_and_parallel_equivalence(tmp_path):
    w1, t1 = _random_run(3, 1)
    w2, t2 = _random_run(3, 4)
    t1.dump(tmp_path / "a.jsonl")
    t2.dump(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert json.dumps(w1.to_dict(), sort_keys=True) == json.dumps(w2.to_dict(), sort_keys=True)
    assert SimulationTrace.load(tmp_path / "a.jsonl").records == t1.records


def test_item_count_invariant():
    w, trace = _random_run(8, 2)
    created = sum(1 for r in trace.records if r.action.startswith(("post(", "reply(", "retweet(")))
    assert len(w.items) == created


def test_systemic_failure_aborts():
    c = corpus(n=3, follows=())
    b = MockBackend([ScriptEntry("u0", "*", "SipAnalysis", SIP_TEXT), ScriptEntry("u0", "*", "ActionSelect", IDLE)])
    with pytest.raises(SystemicBackendFailure):
        step(world(c), b, SEQ)
    # one failure in three is tolerated
    replies = {"SipAnalysis": SIP_TEXT, "ActionSelect": IDLE}

    def flaky(request):
        if request.agent_id == "u2":
            raise ScriptMiss((request.agent_id, request.step, request.template_id))
        return replies[request.template_id]

    w = step(world(c), MockBackend(responder=flaky), SEQ)
    assert w.clock.step == 1
    assert [e.parse_status for e in w.event_log] == ["ok", "ok", "backend_failure"]


def test_annotator_labels_reach_trace():
    lab = Labels(Stance.OPPOSE, "testimony", "negative")
    w = world(corpus(n=1, follows=()))
    _, trace = run(w, backend(("u0", 0, "ActionSelect", act('post(content="x")'))), 1, SEQ, annotator=TableAnnotator({("u0", 0): lab}))
    assert trace.records[0].labels == lab.to_dict()
    assert w.items[sim_item_id(0, "u0")].labels == lab


# --- feed and notifications -------------------------------------------------

def test_feed_empty_without_follows():
    w = world(corpus(follows=(), items=[root()]))
    assert build_feed(w, "u1") == []


def test_feed_truncates_to_newest():
    items = [root(f"p{i:02d}", "u0", hours=i) for i in range(12)]
    w = world(corpus(items=items))
    feed = build_feed(w, "u1", 10)
    assert [it.item_id for it in feed] == [f"p{i:02d}" for i in range(11, 1, -1)]


def test_feed_includes_threads_viewer_joined():
    w = world(corpus(follows=(), items=[root()]))
    w.items["r"] = ContentItem("r", "u1", "reply", DEFAULT_ORIGIN, "p0", step=0)
    assert [it.item_id for it in build_feed(w, "u1")] == ["p0"]


def test_feed_tie_breaks_engagement_then_id():
    items = [root("pa"), root("pb"), root("pc")]
    w = world(corpus(n=3, follows=(("u1", "u0"),), items=items))
    w.likes[("u2", "pc")] = 0
    assert [it.item_id for it in build_feed(w, "u1")] == ["pc", "pa", "pb"]


def test_unknown_viewer():
    w = world(corpus())
    with pytest.raises(UnknownAgent):
        build_feed(w, "zz")
    with pytest.raises(UnknownAgent):
        collect_notifications(w, "zz", 0)


def test_notifications_since_step():
    w = world(corpus(items=[root()]))
    w.items["r0"] = ContentItem("r0", "u1", "old", DEFAULT_ORIGIN, "p0", step=0)
    w.items["r1"] = ContentItem("r1", "u1", "new", DEFAULT_ORIGIN, "p0", step=1)
    assert [n.source_item_id for n in collect_notifications(w, "u0", 1)] == ["r1"]
    assert [n.source_item_id for n in collect_notifications(w, "u0", 0)] == ["r0", "r1"]


def test_checkpoint_is_json(tmp_path):
    w, _ = _random_run(2, 1)
    w.dump(tmp_path / "ck.json")
    data = json.loads((tmp_path / "ck.json").read_text())
    assert data["clock"]["step"] == 5 and len(data["agents"]) == 6
    assert data["event_log"] == sorted(data["event_log"], key=lambda e: (e["step"], e["agent_id"]))


# --- snapshot isolation -----------------------------------------------------

_ID = re.compile(r"s(\d{4})-[a-z0-9]+")


def probe_run(seed):
    """Every agent but the probe posts at random; the probe follows everyone and
    tries to reply to whatever the others post in the same step."""
    rng = random.Random(seed)
    n_agents, n_steps = rng.randint(3, 7), rng.randint(2, 5)
    c = synth_event(seed, n_agents, 1, script=[])
    probe = c.users[-1].agent_id
    others = [u.agent_id for u in c.users[:-1]]
    c = EventCorpus(c.event_id, [], c.users, [(probe, o) for o in others] + [f for f in c.follows if f[0] != probe])
    entries = [("*", "*", "SipAnalysis", SIP_TEXT), ("*", "*", "ActionSelect", IDLE)]
    same_step_targets = {}
    for t in range(n_steps):
        posters = [o for o in others if rng.random() < 0.7]
        for o in posters:
            entries.append((o, t, "ActionSelect", act(f'post(content="{o} posts at {t}")')))
        if posters:
            target = sim_item_id(t, rng.choice(posters))
            same_step_targets[t] = target
            entries.append((probe, t, "ActionSelect", act(f'reply(content="saw it", author="x", original_tweet_id="{target}")')))
    b = scripted(entries)
    cfg = EngineConfig(seed=seed, max_parallel=rng.choice([1, 4]))
    w, trace = run(world(c, cfg), b, n_steps, cfg)
    return probe, b, trace, same_step_targets


@pytest.mark.parametrize("seed", range(20))
def test_probe_sees_nothing_from_current_step(seed):
    probe, b, trace, targets = probe_run(seed)
    for call in b.calls:
        if call.agent_id != probe:
            continue
        text = "\n".join(m.content for m in call.messages)
        assert all(int(s) < call.step for s in _ID.findall(text))
    for rec in trace.records:
        if rec.agent_id == probe and rec.step in targets:
            assert rec.parse_status == INVALID_TARGET and rec.action == "do_nothing()"
