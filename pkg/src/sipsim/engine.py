"""Time-step simulation over a social graph.

Each step freezes a snapshot, lets every active agent decide against it
(concurrently, up to ``max_parallel``), then commits the actions one agent at a
time in agent-id order. Nothing created during step ``t`` is visible to any
decision of step ``t``.
"""
from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .agent import (
    BACKEND_FAILURE,
    INVALID_TARGET,
    AgentConfig,
    AgentState,
    Annotator,
    Decision,
    NullAnnotator,
    Observation,
    decide,
    target_exists,
)
from .backend import ChatBackend
from .dataset import EventCorpus, item_record, sim_item_id, validate_corpus
from .domain import (
    DEFAULT_ORIGIN,
    AgentAction,
    ContentItem,
    DoNothing,
    Labels,
    Like,
    Post,
    Reply,
    Retweet,
    SimulationClock,
    SocialGraph,
    Stance,
    action_kind,
    format_timestamp,
    root_of,
)
from .errors import EmptyCorpus, SystemicBackendFailure, UnknownAgent
from .memory import Notification, SocialMemory
from .parser import render_action
from .prompts import PromptTemplate, default_templates

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 0
    feed_size: int = 10
    wall_time_per_step: timedelta = timedelta(hours=1)
    origin: datetime | None = None
    seed_posts: bool = True
    activity_rate: float = 1.0
    stance_distribution: Mapping[str, float] = field(
        default_factory=lambda: {"support": 1 / 3, "neutral": 1 / 3, "oppose": 1 / 3}
    )
    emotion_distribution: Mapping[str, float] = field(
        default_factory=lambda: {"positive": 1 / 3, "neutral": 1 / 3, "negative": 1 / 3}
    )
    failure_threshold: float = 0.5
    max_parallel: int = 4
    trigger_news: str | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.feed_size < 1:
            raise ValueError("feed_size must be >= 1")
        if not 0.0 < self.activity_rate <= 1.0:
            raise ValueError("activity_rate must lie in (0, 1]")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ValueError("failure_threshold must lie in [0, 1]")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


@dataclass(frozen=True)
class LogEvent:
    step: int
    agent_id: str
    action: str
    parse_status: str

    def to_dict(self) -> dict:
        return {"step": self.step, "agent_id": self.agent_id, "action": self.action, "parse_status": self.parse_status}


@dataclass
class WorldState:
    graph: SocialGraph
    items: dict[str, ContentItem]
    likes: dict[tuple[str, str], int]  # (agent_id, item_id) -> step liked
    clock: SimulationClock
    agents: dict[str, AgentState]
    trigger_news: str = ""
    event_log: list[LogEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        followees: dict[str, list[str]] = {a: [] for a in self.graph.agents}
        for a, b in self.graph.follows:
            followees[a].append(b)
        return {
            "clock": {
                "step": self.clock.step,
                "wall_time_per_step_s": self.clock.wall_time_per_step.total_seconds(),
                "origin": format_timestamp(self.clock.origin),
            },
            "trigger_news": self.trigger_news,
            "agents": [
                {
                    "user_id": aid,
                    "name": st.profile.name,
                    "country": st.profile.country,
                    "gender": st.profile.gender,
                    "signature": st.profile.signature,
                    "followees": sorted(followees[aid]),
                    "stance": st.stance.value if st.stance else None,
                    "emotion": st.emotion,
                    "last_active_step": st.last_active_step,
                    "memory": st.memory.to_records(),
                }
                for aid, st in sorted(self.agents.items())
            ],
            "items": [item_record(it) for it in self.items.values()],
            "likes": [{"agent_id": a, "item_id": i, "step": s} for (a, i), s in sorted(self.likes.items())],
            "event_log": [e.to_dict() for e in self.event_log],
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=1), encoding="utf-8")


@dataclass(frozen=True)
class Snapshot:
    """Read-only view of the world at the start of a step."""

    step: int
    graph: SocialGraph
    items: Mapping[str, ContentItem]
    likes: Mapping[tuple[str, str], int]
    clock: SimulationClock

    @classmethod
    def of(cls, world: WorldState) -> "Snapshot":
        return cls(
            world.clock.step,
            world.graph,
            MappingProxyType(dict(world.items)),
            MappingProxyType(dict(world.likes)),
            world.clock,
        )


@dataclass(frozen=True)
class TraceRecord:
    step: int
    agent_id: str
    sip: dict | None
    action: str
    labels: dict | None
    parse_status: str

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "agent_id": self.agent_id,
            "sip": self.sip,
            "action": self.action,
            "labels": self.labels,
            "parse_status": self.parse_status,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TraceRecord":
        return cls(int(d["step"]), str(d["agent_id"]), d.get("sip"), str(d["action"]), d.get("labels"), str(d["parse_status"]))


@dataclass
class SimulationTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) for r in self.records]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.lines()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SimulationTrace":
        with Path(path).open(encoding="utf-8") as fh:
            return cls([TraceRecord.from_dict(json.loads(line)) for line in fh if line.strip()])


# --- construction -----------------------------------------------------------

def construct_environment(corpus: EventCorpus, config: EngineConfig | None = None) -> WorldState:
    """World with the corpus users and follow graph; root posts seeded at step 0."""
    config = config or EngineConfig()
    if not corpus.users:
        raise EmptyCorpus(f"event {corpus.event_id!r} has no users")
    validate_corpus(corpus)
    graph = SocialGraph.build(corpus.users, corpus.follows)
    roots = corpus.roots if config.seed_posts else []
    origin = config.origin or (min(r.timestamp for r in roots) if roots else DEFAULT_ORIGIN)
    items = {}
    for r in roots:
        items[r.item_id] = ContentItem(r.item_id, r.author_id, r.text, r.timestamp, None, 0, r.labels, None)
    agents = {
        p.agent_id: AgentState(p, SocialMemory(config.agent.memory), p.initial_stance, p.initial_emotion)
        for p in corpus.users
    }
    trigger = config.trigger_news if config.trigger_news is not None else (roots[0].text if roots else "")
    return WorldState(
        graph=graph,
        items=items,
        likes={},
        clock=SimulationClock(0, config.wall_time_per_step, origin),
        agents=dict(sorted(agents.items())),
        trigger_news=trigger,
    )


def _sample(rng: random.Random, distribution: Mapping[str, float]) -> str:
    labels = sorted(distribution)
    weights = [distribution[k] for k in labels]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError(f"invalid distribution {dict(distribution)!r}")
    return rng.choices(labels, weights=weights, k=1)[0]


def initialize(world: WorldState, config: EngineConfig | None = None) -> WorldState:
    """Fill in missing stances/emotions from the configured distributions (seeded)."""
    config = config or EngineConfig()
    rng = random.Random(f"init:{config.seed}")
    for aid in sorted(world.agents):
        st = world.agents[aid]
        if st.stance is None:
            st.stance = Stance(_sample(rng, config.stance_distribution))
        if st.emotion is None:
            st.emotion = _sample(rng, config.emotion_distribution)
        if not st.memory.cognitive:
            st.memory.add_cognitive("role", st.role_description(), tags=("role",), step=0)
    return world


# --- feed and notifications -------------------------------------------------

def _engagement(items: Mapping[str, ContentItem], likes: Mapping[tuple[str, str], int]) -> dict[str, int]:
    counts = {iid: 0 for iid in items}
    for it in items.values():
        if it.parent_id in counts:
            counts[it.parent_id] += 1
    for _, iid in likes:
        if iid in counts:
            counts[iid] += 1
    return counts


def build_feed(world: WorldState | Snapshot, viewer: str, size: int = 10) -> list[ContentItem]:
    """Up to ``size`` items from followees or from roots of threads the viewer joined.

    Newest first; ties by engagement (likes + replies), then item id.
    """
    if viewer not in world.graph.agents:
        raise UnknownAgent(viewer)
    items = world.items
    followees = world.graph.followees(viewer)
    candidates = {iid for iid, it in items.items() if it.author_id in followees}
    for it in items.values():
        if it.author_id == viewer:
            candidates.add(root_of(it, items).item_id)
    candidates = {iid for iid in candidates if items[iid].author_id != viewer}
    engagement = _engagement(items, world.likes)

    def key(iid: str):
        it = items[iid]
        return (-(it.step or 0), -it.timestamp.timestamp(), -engagement[iid], iid)

    return [items[iid] for iid in sorted(candidates, key=key)[:size]]


def collect_notifications(world: WorldState | Snapshot, viewer: str, since_step: int) -> list[Notification]:
    """Replies, retweets and likes on the viewer's items at step >= ``since_step``."""
    if viewer not in world.graph.agents:
        raise UnknownAgent(viewer)
    items = world.items
    mine = {iid for iid, it in items.items() if it.author_id == viewer}
    out = []
    for it in items.values():
        step = it.step or 0
        if step < since_step or it.author_id == viewer:
            continue
        if it.parent_id in mine:
            out.append(Notification("reply", it.author_id, it.parent_id, step, it.text, it.item_id))
        elif it.quoted_id in mine:
            out.append(Notification("retweet", it.author_id, it.quoted_id, step, it.text, it.item_id))
    for (agent_id, iid), step in world.likes.items():
        if iid in mine and step >= since_step and agent_id != viewer:
            out.append(Notification("like", agent_id, iid, step))
    out.sort(key=lambda n: (n.step, n.kind, n.source_item_id or "", n.actor_id, n.item_id))
    return out


# --- stepping ---------------------------------------------------------------

def active_agents(world: WorldState, config: EngineConfig) -> list[str]:
    ids = sorted(world.agents)
    if config.activity_rate >= 1.0:
        return ids
    rng = random.Random(f"activity:{config.seed}:{world.clock.step}")
    return [aid for aid in ids if rng.random() < config.activity_rate]


def observe(snapshot: Snapshot, state: AgentState, config: EngineConfig, trigger_news: str) -> Observation:
    since = state.last_active_step + 1 if state.last_active_step >= 0 else 0
    return Observation(
        step=snapshot.step,
        current_time=snapshot.clock.current_time,
        trigger_news=trigger_news,
        feed=build_feed(snapshot, state.agent_id, config.feed_size),
        notifications=collect_notifications(snapshot, state.agent_id, since),
        items=snapshot.items,
        names=MappingProxyType({aid: p.name for aid, p in snapshot.graph.agents.items()}),
    )


def _action_text(action: AgentAction) -> str:
    if isinstance(action, (Post, Reply, Retweet)):
        return action.content
    return ""


def apply_action(
    world: WorldState,
    snapshot: Snapshot,
    agent_id: str,
    action: AgentAction,
    labels: Labels | None,
) -> ContentItem | None:
    """Commit one action; returns the created item (Post/Reply/Retweet) or None."""
    step = snapshot.step
    if isinstance(action, DoNothing):
        return None
    if isinstance(action, Like):
        world.likes.setdefault((agent_id, action.item_id), step)
        return None
    item_id = sim_item_id(step, agent_id)
    ts = snapshot.clock.time_at(step)
    if isinstance(action, Post):
        item = ContentItem(item_id, agent_id, action.content, ts, None, step, labels)
    elif isinstance(action, Reply):
        item = ContentItem(item_id, agent_id, action.content, ts, action.original_tweet_id, step, labels)
    else:
        item = ContentItem(item_id, agent_id, action.content, ts, None, step, labels, action.original_tweet_id)
    world.items[item_id] = item
    return item


def step(
    world: WorldState,
    backend: ChatBackend,
    config: EngineConfig | None = None,
    *,
    annotator: Annotator | None = None,
    templates: Mapping[str, PromptTemplate] | None = None,
    trace: SimulationTrace | None = None,
) -> WorldState:
    """Advance the world by one step (mutates and returns ``world``)."""
    config = config or EngineConfig()
    annotator = annotator or NullAnnotator()
    templates = templates or default_templates()
    snapshot = Snapshot.of(world)
    active = active_agents(world, config)
    observations = {aid: observe(snapshot, world.agents[aid], config, world.trigger_news) for aid in active}
    agent_cfg = config.agent

    def run_one(aid: str) -> Decision:
        return decide(world.agents[aid], observations[aid], backend, agent_cfg, templates)

    if config.max_parallel > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
            decisions = list(pool.map(run_one, active))
    else:
        decisions = [run_one(aid) for aid in active]

    failures = sum(1 for d in decisions if d.parse_status == BACKEND_FAILURE)
    if decisions and failures / len(decisions) > config.failure_threshold:
        raise SystemicBackendFailure(
            f"{failures}/{len(decisions)} backend failures at step {snapshot.step}"
        )

    for d in sorted(decisions, key=lambda d: d.agent_id):
        action = d.action
        status = d.parse_status
        if not target_exists(action, snapshot.items):
            action, status = DoNothing(), INVALID_TARGET
        labels = None
        if not isinstance(action, (DoNothing, Like)):
            labels = annotator.annotate(d.agent_id, snapshot.step, action, _action_text(action))
        apply_action(world, snapshot, d.agent_id, action, labels)
        world.event_log.append(LogEvent(snapshot.step, d.agent_id, render_action(action), status))
        if trace is not None:
            trace.records.append(
                TraceRecord(
                    snapshot.step,
                    d.agent_id,
                    d.analysis.to_dict() if d.analysis else None,
                    render_action(action),
                    labels.to_dict() if labels else None,
                    status,
                )
            )
    world.clock = world.clock.tick()
    return world


def run(
    world: WorldState,
    backend: ChatBackend,
    steps: int,
    config: EngineConfig | None = None,
    *,
    annotator: Annotator | None = None,
    templates: Mapping[str, PromptTemplate] | None = None,
    on_step=None,
) -> tuple[WorldState, SimulationTrace]:
    """Run ``steps`` sequential steps and return the world plus the decision trace."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    trace = SimulationTrace()
    for _ in range(steps):
        step(world, backend, config, annotator=annotator, templates=templates, trace=trace)
        if on_step is not None:
            on_step(world)
    return world, trace


def trace_action_kind(record: TraceRecord) -> str:
    from .parser import parse_action_call

    return action_kind(parse_action_call(record.action))
