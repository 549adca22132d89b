import json
import time
from datetime import datetime, timedelta, timezone

import pytest

from sipsim.backend import MockBackend, ScriptEntry

T0 = datetime(2024, 3, 1, 12, 0, tzinfo=timezone.utc)

SIP_TEXT = (
    "[Cue] A new post about the event.\n"
    "[Interpret] People disagree strongly.\n"
    "[Goal] Share my view politely.\n"
    "[Retrieve] I could reply or post.\n"
    "[Evaluate] A short post is fine."
)
IDLE = "[OPTION 4] Thought: [Evaluate] nothing needs a response. Action: do_nothing()"


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def ts(hours: float = 0) -> str:
    return (T0 + timedelta(hours=hours)).isoformat().replace("+00:00", "Z")


@pytest.fixture
def three_item_records():
    """One post, a reply at +2h and a reply-to-reply at +4h."""
    return [
        {"kind": "user", "user_id": "u1", "name": "Ana", "followees": ["u2"]},
        {"kind": "user", "user_id": "u2", "name": "Ben", "followees": []},
        {"kind": "item", "item_id": "p1", "author_id": "u1", "timestamp": ts(0), "text": "Big news today"},
        {"kind": "item", "item_id": "r1", "author_id": "u2", "parent_id": "p1", "timestamp": ts(2), "text": "Really?"},
        {"kind": "item", "item_id": "r2", "author_id": "u1", "parent_id": "r1", "timestamp": ts(4), "text": "Yes"},
    ]


@pytest.fixture
def three_item_event(tmp_path, three_item_records):
    return write_jsonl(tmp_path / "event.jsonl", three_item_records)


def scripted(entries, responder=None):
    return MockBackend([ScriptEntry(*e) for e in entries], responder=responder)


def replay_run(corpus, steps, flip=None, seed=1):
    """Run the engine on a script that replays ``corpus``; returns the trace."""
    from sipsim.agent import BackendAnnotator
    from sipsim.domain import Taxonomy
    from sipsim.engine import EngineConfig, construct_environment, initialize, run
    from sipsim.replay import replay_script

    backend = MockBackend(replay_script(corpus, flip))
    cfg = EngineConfig(seed=seed, seed_posts=False)
    world = initialize(construct_environment(corpus, cfg), cfg)
    _, trace = run(world, backend, steps, cfg, annotator=BackendAnnotator(backend, Taxonomy()))
    return trace


def replay_workspace(root, seed=7, n_agents=10, n_steps=11, flip=None):
    """Event file, replay script and YAML config for a closed-loop CLI run."""
    import yaml

    from sipsim.backend import write_script
    from sipsim.dataset import dump_event, synth_event
    from sipsim.replay import replay_script

    corpus = synth_event(seed, n_agents, n_steps)
    dump_event(corpus, root / "event.jsonl")
    write_script(replay_script(corpus, flip), root / "script.jsonl")
    config = {
        "event_path": "event.jsonl",
        "seed": seed,
        "steps": n_steps,
        "seed_posts": False,
        "backend": {"kind": "mock", "script": "script.jsonl"},
    }
    (root / "config.yaml").write_text(yaml.safe_dump(config), encoding="utf-8")
    return corpus, root / "config.yaml"


# --- acceptance summary -----------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}
_SESSION_START = time.perf_counter()
SUITE_BUDGET_S = 300.0


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]}  {name}")
    elapsed = time.perf_counter() - _SESSION_START
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(f"{verdict}  AC10 full test session in {elapsed:.1f}s (< {SUITE_BUDGET_S:.0f}s)")
