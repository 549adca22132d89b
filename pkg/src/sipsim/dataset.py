"""Event corpora: JSON-lines loading, validation, Table-1 style statistics and
seeded synthetic fixtures."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from statistics import fmean
from typing import Iterable, Sequence

from .domain import (
    DEFAULT_ORIGIN,
    AgentProfile,
    ContentItem,
    Labels,
    Stance,
    Taxonomy,
    depth_of,
    format_timestamp,
    parse_timestamp,
)
from .errors import DataError, EmptyCorpus, IntegrityError, SchemaError

log = logging.getLogger(__name__)

_USER_FIELDS = {"kind", "user_id", "name", "country", "gender", "signature", "followees", "stance", "emotion"}
_ITEM_FIELDS = {"kind", "item_id", "author_id", "parent_id", "timestamp", "text", "labels", "step", "quoted_id"}
_EVENT_FIELDS = {"kind", "event_id"}
_LABEL_FIELDS = {"stance", "content_type", "emotion"}


@dataclass
class EventCorpus:
    event_id: str
    items: list[ContentItem]
    users: list[AgentProfile]
    follows: list[tuple[str, str]] = field(default_factory=list)

    def by_id(self) -> dict[str, ContentItem]:
        return {it.item_id: it for it in self.items}

    @property
    def roots(self) -> list[ContentItem]:
        return [it for it in self.items if it.parent_id is None]


@dataclass(frozen=True)
class CorpusStats:
    first_comments: int
    nested_comments: int
    avg_depth: float
    avg_length: float
    total_users: int
    active_users: int
    avg_freq: float
    time_span: timedelta
    avg_span: timedelta
    avg_span_defined: bool

    def to_dict(self) -> dict:
        return {
            "first_comments": self.first_comments,
            "nested_comments": self.nested_comments,
            "avg_depth": self.avg_depth,
            "avg_length": self.avg_length,
            "total_users": self.total_users,
            "active_users": self.active_users,
            "avg_freq": self.avg_freq,
            "time_span_hours": self.time_span.total_seconds() / 3600,
            "avg_span_hours": self.avg_span.total_seconds() / 3600,
            "avg_span_defined": self.avg_span_defined,
        }


# --- validation -------------------------------------------------------------

def validate_corpus(corpus: EventCorpus) -> None:
    """Raise IntegrityError unless ids are unique, authors resolve and items form a forest."""
    user_ids = set()
    for u in corpus.users:
        if u.agent_id in user_ids:
            raise IntegrityError(f"duplicate user_id {u.agent_id!r}")
        user_ids.add(u.agent_id)
    for a, b in corpus.follows:
        if a == b:
            raise IntegrityError(f"user {a!r} follows themself")
        if a not in user_ids or b not in user_ids:
            raise IntegrityError(f"follow edge ({a!r}, {b!r}) references an unknown user")
    index: dict[str, ContentItem] = {}
    for it in corpus.items:
        if it.item_id in index:
            raise IntegrityError(f"duplicate item_id {it.item_id!r}")
        index[it.item_id] = it
    for it in corpus.items:
        if it.author_id not in user_ids:
            raise IntegrityError(f"item {it.item_id!r} has unknown author {it.author_id!r}")
        if it.quoted_id is not None and it.quoted_id not in index:
            raise IntegrityError(f"item {it.item_id!r} quotes unknown item {it.quoted_id!r}")
        try:
            depth_of(it, index)
        except DataError as exc:
            raise IntegrityError(str(exc)) from exc


def _sort_items(items: Iterable[ContentItem]) -> list[ContentItem]:
    return sorted(items, key=lambda it: (it.timestamp, it.item_id))


# --- JSON lines -------------------------------------------------------------

def _check_fields(rec: dict, allowed: set[str], required: Iterable[str], line: int, strict: bool) -> None:
    for name in required:
        if name not in rec:
            raise SchemaError(f"missing field {name!r}", line)
    unknown = sorted(set(rec) - allowed)
    if unknown:
        if strict:
            raise SchemaError(f"unknown field(s) {', '.join(unknown)}", line)
        log.warning("line %d: ignoring unknown field(s) %s", line, ", ".join(unknown))


def _expect(rec: dict, name: str, types, line: int, optional: bool = False):
    value = rec.get(name)
    if value is None and optional:
        return None
    if not isinstance(value, types) or isinstance(value, bool):
        raise SchemaError(f"field {name!r} has wrong type {type(value).__name__}", line)
    return value


def _parse_labels(raw, line: int, taxonomy: Taxonomy | None) -> Labels | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise SchemaError("field 'labels' must be an object or null", line)
    missing = _LABEL_FIELDS - set(raw)
    if missing:
        raise SchemaError(f"labels missing {', '.join(sorted(missing))}", line)
    extra = set(raw) - _LABEL_FIELDS
    if extra:
        raise SchemaError(f"unknown label field(s) {', '.join(sorted(extra))}", line)
    try:
        labels = Labels.from_dict(raw)
    except ValueError as exc:
        raise SchemaError(f"bad stance {raw.get('stance')!r}", line) from exc
    if taxonomy is not None:
        problems = taxonomy.check(labels)
        if problems:
            raise SchemaError("; ".join(problems), line)
    return labels


def parse_event_lines(
    lines: Iterable[str],
    event_id: str = "event",
    *,
    strict: bool = True,
    taxonomy: Taxonomy | None = None,
) -> EventCorpus:
    users: list[AgentProfile] = []
    follows: list[tuple[str, str]] = []
    items: list[ContentItem] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from exc
        if not isinstance(rec, dict):
            raise SchemaError("record must be a JSON object", lineno)
        kind = rec.get("kind")
        if kind == "event":
            _check_fields(rec, _EVENT_FIELDS, ["event_id"], lineno, strict)
            event_id = _expect(rec, "event_id", str, lineno)
        elif kind == "user":
            _check_fields(rec, _USER_FIELDS, ["user_id", "name"], lineno, strict)
            uid = _expect(rec, "user_id", str, lineno)
            name = _expect(rec, "name", str, lineno)
            followees = rec.get("followees") or []
            if not isinstance(followees, list) or not all(isinstance(f, str) for f in followees):
                raise SchemaError("field 'followees' must be a list of strings", lineno)
            stance = _expect(rec, "stance", str, lineno, optional=True)
            emotion = _expect(rec, "emotion", str, lineno, optional=True)
            if emotion is not None and taxonomy is not None and emotion not in taxonomy.emotion:
                raise SchemaError(f"unknown emotion {emotion!r}", lineno)
            try:
                profile = AgentProfile(
                    agent_id=uid,
                    name=name,
                    country=_expect(rec, "country", str, lineno, optional=True) or "",
                    gender=_expect(rec, "gender", str, lineno, optional=True) or "",
                    signature=_expect(rec, "signature", str, lineno, optional=True) or "",
                    initial_stance=Stance(stance) if stance is not None else None,
                    initial_emotion=emotion,
                )
            except ValueError as exc:
                raise SchemaError(str(exc), lineno) from exc
            users.append(profile)
            follows.extend((uid, f) for f in followees)
        elif kind == "item":
            _check_fields(rec, _ITEM_FIELDS, ["item_id", "author_id", "timestamp", "text"], lineno, strict)
            ts_raw = _expect(rec, "timestamp", str, lineno)
            try:
                ts = parse_timestamp(ts_raw)
            except ValueError as exc:
                raise SchemaError(f"bad timestamp {ts_raw!r}", lineno) from exc
            items.append(
                ContentItem(
                    item_id=_expect(rec, "item_id", str, lineno),
                    author_id=_expect(rec, "author_id", str, lineno),
                    text=_expect(rec, "text", str, lineno),
                    timestamp=ts,
                    parent_id=_expect(rec, "parent_id", str, lineno, optional=True),
                    step=_expect(rec, "step", int, lineno, optional=True),
                    labels=_parse_labels(rec.get("labels"), lineno, taxonomy),
                    quoted_id=_expect(rec, "quoted_id", str, lineno, optional=True),
                )
            )
        else:
            raise SchemaError(f"unknown record kind {kind!r}", lineno)
    corpus = EventCorpus(event_id, _sort_items(items), users, follows)
    validate_corpus(corpus)
    return corpus


def load_event(
    path: str | Path,
    *,
    strict: bool = True,
    taxonomy: Taxonomy | None = None,
) -> EventCorpus:
    """Load and validate an event file (UTF-8 JSON lines)."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_event_lines(fh, event_id=path.stem, strict=strict, taxonomy=taxonomy)


def item_record(item: ContentItem) -> dict:
    rec = {
        "kind": "item",
        "item_id": item.item_id,
        "author_id": item.author_id,
        "parent_id": item.parent_id,
        "timestamp": format_timestamp(item.timestamp),
        "text": item.text,
        "labels": item.labels.to_dict() if item.labels else None,
    }
    if item.step is not None:
        rec["step"] = item.step
    if item.quoted_id is not None:
        rec["quoted_id"] = item.quoted_id
    return rec


def corpus_lines(corpus: EventCorpus) -> list[str]:
    followees: dict[str, list[str]] = {u.agent_id: [] for u in corpus.users}
    for a, b in corpus.follows:
        followees[a].append(b)
    out = [{"kind": "event", "event_id": corpus.event_id}]
    for u in corpus.users:
        rec = {
            "kind": "user",
            "user_id": u.agent_id,
            "name": u.name,
            "country": u.country,
            "gender": u.gender,
            "signature": u.signature,
            "followees": sorted(followees[u.agent_id]),
        }
        if u.initial_stance is not None:
            rec["stance"] = u.initial_stance.value
        if u.initial_emotion is not None:
            rec["emotion"] = u.initial_emotion
        out.append(rec)
    out.extend(item_record(it) for it in corpus.items)
    return [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in out]


def dump_event(corpus: EventCorpus, path: str | Path) -> None:
    Path(path).write_text("\n".join(corpus_lines(corpus)) + "\n", encoding="utf-8")


# --- statistics -------------------------------------------------------------

def compute_stats(corpus: EventCorpus) -> CorpusStats:
    if not corpus.items:
        raise EmptyCorpus(f"event {corpus.event_id!r} has no items")
    index = corpus.by_id()
    comments = [it for it in corpus.items if it.parent_id is not None]
    depths = [depth_of(it, index) for it in comments]

    per_user: dict[str, int] = {}
    for it in comments:
        per_user[it.author_id] = per_user.get(it.author_id, 0) + 1
    active = {u: n for u, n in per_user.items() if n >= 2}

    stamps = [it.timestamp for it in corpus.items]
    latencies = [it.timestamp - index[it.parent_id].timestamp for it in comments]

    return CorpusStats(
        first_comments=sum(1 for d in depths if d == 1),
        nested_comments=sum(1 for d in depths if d >= 2),
        avg_depth=fmean(depths) if depths else 0.0,
        avg_length=fmean(len(it.text) for it in comments) if comments else 0.0,
        total_users=len(corpus.users),
        active_users=len(active),
        avg_freq=sum(active.values()) / len(active) if active else 0.0,
        time_span=max(stamps) - min(stamps),
        avg_span=sum(latencies, timedelta(0)) / len(latencies) if latencies else timedelta(0),
        avg_span_defined=bool(latencies),
    )


# --- synthetic fixtures -----------------------------------------------------

def sim_item_id(step: int, agent_id: str) -> str:
    """Item id the engine assigns to the item ``agent_id`` creates at ``step``.

    Synthetic corpora use the same scheme so a scripted replay reproduces ids.
    """
    return f"s{step:04d}-{agent_id}"


@dataclass(frozen=True)
class ScriptedTurn:
    """One row of a synthetic behaviour table.

    ``None`` label fields are drawn from the seeded RNG; ``reply_to`` may be an
    explicit item id, ``"random"`` (any earlier item) or ``None`` for a root post.
    """

    step: int
    agent: int | str
    action: str = "post"  # post | reply | retweet | nothing
    stance: Stance | str | None = None
    content_type: str | None = None
    emotion: str | None = None
    reply_to: str | None = None


def agent_ids(n_agents: int) -> list[str]:
    width = max(3, len(str(n_agents - 1)))
    return [f"a{i:0{width}d}" for i in range(n_agents)]


def random_script(seed: int, n_agents: int, n_steps: int, p_act: float = 1.0, p_reply: float = 0.5) -> list[ScriptedTurn]:
    """A behaviour table where each agent acts at each step with probability ``p_act``."""
    rng = random.Random(f"script:{seed}")
    turns = []
    for step in range(n_steps):
        for agent in range(n_agents):
            if rng.random() >= p_act:
                continue
            action = "reply" if step > 0 and rng.random() < p_reply else "post"
            turns.append(ScriptedTurn(step, agent, action, reply_to="random" if action == "reply" else None))
    return turns


def synth_event(
    seed: int,
    n_agents: int,
    n_steps: int,
    script: Sequence[ScriptedTurn] | None = None,
    *,
    taxonomy: Taxonomy | None = None,
    follow_degree: int = 3,
    wall_time_per_step: timedelta = timedelta(hours=1),
    origin: datetime = DEFAULT_ORIGIN,
    event_id: str | None = None,
) -> EventCorpus:
    """Deterministic labeled corpus built from a behaviour table.

    Items created at step ``t`` carry ``step=t``, timestamp ``origin + t * wall_time``
    and the id the simulation engine would give them. Reply targets are always items
    from earlier steps.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    taxonomy = taxonomy or Taxonomy()
    rng = random.Random(seed)
    ids = agent_ids(n_agents)
    stances = list(Stance)

    users = [
        AgentProfile(
            agent_id=aid,
            name=f"Agent {aid}",
            country=rng.choice(["US", "UK", "CA", "AU", "IN"]),
            gender=rng.choice(["female", "male", "nonbinary"]),
            signature=f"synthetic user {aid}",
        )
        for aid in ids
    ]
    follows = set()
    if n_agents > 1:
        for aid in ids:
            others = [b for b in ids if b != aid]
            for b in rng.sample(others, min(follow_degree, len(others))):
                follows.add((aid, b))

    if script is None:
        script = random_script(seed, n_agents, n_steps)
    items: list[ContentItem] = []
    used: set[str] = set()
    for turn in sorted(script, key=lambda t: (t.step, _agent_key(t.agent, ids))):
        if turn.step < 0 or turn.step >= n_steps:
            raise ValueError(f"scripted step {turn.step} outside 0..{n_steps - 1}")
        if turn.action == "nothing":
            continue
        author = ids[turn.agent] if isinstance(turn.agent, int) else turn.agent
        if author not in ids:
            raise ValueError(f"scripted agent {turn.agent!r} does not exist")
        item_id = sim_item_id(turn.step, author)
        if item_id in used:
            raise ValueError(f"agent {author} acts twice at step {turn.step}")
        used.add(item_id)
        labels = Labels(
            Stance(turn.stance) if turn.stance is not None else rng.choice(stances),
            turn.content_type or rng.choice(taxonomy.content_type.labels),
            turn.emotion or rng.choice(taxonomy.emotion.labels),
        )
        earlier = [it for it in items if it.step < turn.step]
        parent = quoted = None
        if turn.action in ("reply", "retweet"):
            target = turn.reply_to or "random"
            if target == "random":
                if not earlier:
                    raise ValueError(f"{turn.action} at step {turn.step} has no earlier item to target")
                target = rng.choice(earlier).item_id
            elif target not in {it.item_id for it in earlier}:
                raise ValueError(f"{turn.action} target {target!r} is not an earlier item")
            if turn.action == "reply":
                parent = target
            else:
                quoted = target
        elif turn.action != "post":
            raise ValueError(f"unknown scripted action {turn.action!r}")
        text = (
            f"{author} {turn.action} at step {turn.step}: "
            f"{labels.stance.value} / {labels.content_type} / {labels.emotion} #{rng.randrange(10_000):04d}"
        )
        items.append(
            ContentItem(
                item_id=item_id,
                author_id=author,
                text=text,
                timestamp=origin + turn.step * wall_time_per_step,
                parent_id=parent,
                step=turn.step,
                labels=labels,
                quoted_id=quoted,
            )
        )
    corpus = EventCorpus(event_id or f"synth-{seed}", _sort_items(items), users, sorted(follows))
    validate_corpus(corpus)
    return corpus


def _agent_key(agent: int | str, ids: list[str]) -> int:
    if isinstance(agent, int):
        return agent
    return ids.index(agent) if agent in ids else len(ids)
