"""Core vocabulary: agents, the follow graph, content, labels, actions and time."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Iterable, Mapping, Union

from .errors import CycleDetected, IntegrityError, MissingParent


class Stance(str, Enum):
    SUPPORT = "support"
    NEUTRAL = "neutral"
    OPPOSE = "oppose"


_ATTITUDE = {Stance.SUPPORT: 1, Stance.NEUTRAL: 0, Stance.OPPOSE: -1}


def attitude_of(stance: Stance | str) -> int:
    """Numeric attitude of a stance: support +1, neutral 0, oppose -1."""
    return _ATTITUDE[Stance(stance)]


DEFAULT_CONTENT_TYPES = ("call_for_action", "sharing_of_opinion", "testimony", "other")
DEFAULT_EMOTIONS = ("positive", "neutral", "negative")


@dataclass(frozen=True)
class LabelSet:
    """A configurable label taxonomy (content types, emotions)."""

    name: str
    labels: tuple[str, ...]
    fallback: str | None = None

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError(f"label set {self.name!r} is empty")
        if len(set(labels)) != len(labels):
            raise ValueError(f"label set {self.name!r} has duplicate labels")
        if self.fallback is not None and self.fallback not in labels:
            raise ValueError(f"fallback {self.fallback!r} not in label set {self.name!r}")

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def coerce(self, label: str) -> str:
        """Return ``label`` if known, else the fallback label (or raise)."""
        if label in self.labels:
            return label
        if self.fallback is None:
            raise ValueError(f"{label!r} is not a {self.name} label")
        return self.fallback


def content_type_labels(labels: Iterable[str] = DEFAULT_CONTENT_TYPES) -> LabelSet:
    labels = tuple(labels)
    if "other" not in labels:
        labels = labels + ("other",)
    return LabelSet("content_type", labels, fallback="other")


def emotion_labels(labels: Iterable[str] = DEFAULT_EMOTIONS) -> LabelSet:
    return LabelSet("emotion", tuple(labels))


STANCE_LABELS = LabelSet("stance", tuple(s.value for s in Stance))


@dataclass(frozen=True)
class Taxonomy:
    content_type: LabelSet = field(default_factory=content_type_labels)
    emotion: LabelSet = field(default_factory=emotion_labels)

    def check(self, labels: "Labels") -> list[str]:
        """Return a list of problems (empty when the labels fit the taxonomy)."""
        problems = []
        if labels.content_type not in self.content_type:
            problems.append(f"unknown content_type {labels.content_type!r}")
        if labels.emotion not in self.emotion:
            problems.append(f"unknown emotion {labels.emotion!r}")
        return problems


@dataclass(frozen=True)
class Labels:
    stance: Stance
    content_type: str
    emotion: str

    def to_dict(self) -> dict:
        return {"stance": self.stance.value, "content_type": self.content_type, "emotion": self.emotion}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Labels":
        return cls(Stance(d["stance"]), str(d["content_type"]), str(d["emotion"]))


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    name: str
    country: str = ""
    gender: str = ""
    signature: str = ""
    initial_stance: Stance | None = None
    initial_emotion: str | None = None

    def __post_init__(self):
        if not self.agent_id:
            raise ValueError("agent_id must be non-empty")
        if not self.name:
            raise ValueError(f"agent {self.agent_id!r} has an empty name")


@dataclass(frozen=True)
class SocialGraph:
    agents: Mapping[str, AgentProfile]
    follows: frozenset[tuple[str, str]]

    def __post_init__(self):
        for follower, followee in self.follows:
            if follower == followee:
                raise IntegrityError(f"self-follow edge for {follower!r}")
            for end in (follower, followee):
                if end not in self.agents:
                    raise IntegrityError(f"follow edge endpoint {end!r} is not an agent")

    @classmethod
    def build(cls, profiles: Iterable[AgentProfile], edges: Iterable[tuple[str, str]]) -> "SocialGraph":
        agents: dict[str, AgentProfile] = {}
        for p in profiles:
            if p.agent_id in agents:
                raise IntegrityError(f"duplicate agent_id {p.agent_id!r}")
            agents[p.agent_id] = p
        return cls(agents, frozenset(edges))

    def followees(self, agent_id: str) -> set[str]:
        return {b for a, b in self.follows if a == agent_id}

    def followers(self, agent_id: str) -> set[str]:
        return {a for a, b in self.follows if b == agent_id}

    def out_degrees(self) -> dict[str, int]:
        deg = {a: 0 for a in self.agents}
        for a, _ in self.follows:
            deg[a] += 1
        return deg

    def in_degrees(self) -> dict[str, int]:
        deg = {a: 0 for a in self.agents}
        for _, b in self.follows:
            deg[b] += 1
        return deg


@dataclass(frozen=True)
class ContentItem:
    item_id: str
    author_id: str
    text: str
    timestamp: datetime
    parent_id: str | None = None
    step: int | None = None
    labels: Labels | None = None
    # set on retweets: the item being re-shared
    quoted_id: str | None = None

    @property
    def is_root(self) -> bool:
        return self.parent_id is None

    @property
    def kind(self) -> str:
        if self.parent_id is not None:
            return "reply"
        if self.quoted_id is not None:
            return "retweet"
        return "post"


def depth_of(item: ContentItem, corpus: Mapping[str, ContentItem]) -> int:
    """Number of parent hops from ``item`` up to its root post."""
    depth = 0
    seen = {item.item_id}
    current = item
    while current.parent_id is not None:
        parent = corpus.get(current.parent_id)
        if parent is None:
            raise MissingParent(current.item_id, current.parent_id)
        if parent.item_id in seen:
            raise CycleDetected(item.item_id)
        seen.add(parent.item_id)
        depth += 1
        current = parent
    return depth


def root_of(item: ContentItem, corpus: Mapping[str, ContentItem]) -> ContentItem:
    seen = {item.item_id}
    current = item
    while current.parent_id is not None:
        parent = corpus.get(current.parent_id)
        if parent is None:
            raise MissingParent(current.item_id, current.parent_id)
        if parent.item_id in seen:
            raise CycleDetected(item.item_id)
        seen.add(parent.item_id)
        current = parent
    return current


# --- actions ----------------------------------------------------------------

@dataclass(frozen=True)
class DoNothing:
    function = "do_nothing"
    arg_names = ()


@dataclass(frozen=True)
class Post:
    content: str
    function = "post"
    arg_names = ("content",)

    def __post_init__(self):
        _require_text(self, "content")


@dataclass(frozen=True)
class Retweet:
    content: str
    author: str
    original_tweet_id: str
    original_tweet: str
    function = "retweet"
    arg_names = ("content", "author", "original_tweet_id", "original_tweet")

    def __post_init__(self):
        _require_text(self, "content")


@dataclass(frozen=True)
class Reply:
    content: str
    author: str
    original_tweet_id: str
    function = "reply"
    arg_names = ("content", "author", "original_tweet_id")

    def __post_init__(self):
        _require_text(self, "content")


@dataclass(frozen=True)
class Like:
    item_id: str
    function = "like"
    arg_names = ("item_id",)

    def __post_init__(self):
        _require_text(self, "item_id")


AgentAction = Union[DoNothing, Post, Retweet, Reply, Like]

ACTION_TYPES: dict[str, type] = {cls.function: cls for cls in (DoNothing, Post, Retweet, Reply, Like)}

# histogram bins for behaviour comparisons
ACTION_KINDS = ("post", "reply", "retweet", "like", "nothing")


def action_kind(action: AgentAction) -> str:
    return "nothing" if isinstance(action, DoNothing) else action.function


def _require_text(obj, name: str) -> None:
    value = getattr(obj, name)
    if not isinstance(value, str):
        raise TypeError(f"{type(obj).__name__}.{name} must be a string")
    if not value:
        raise ValueError(f"{type(obj).__name__}.{name} must be non-empty")


# --- time -------------------------------------------------------------------

DEFAULT_ORIGIN = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SimulationClock:
    step: int = 0
    wall_time_per_step: timedelta = timedelta(hours=1)
    origin: datetime = DEFAULT_ORIGIN

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.wall_time_per_step <= timedelta(0):
            raise ValueError("wall_time_per_step must be positive")

    @property
    def current_time(self) -> datetime:
        return self.time_at(self.step)

    def time_at(self, step: int) -> datetime:
        return self.origin + step * self.wall_time_per_step

    def tick(self) -> "SimulationClock":
        return SimulationClock(self.step + 1, self.wall_time_per_step, self.origin)


def parse_timestamp(value: str) -> datetime:
    """ISO-8601 to an aware UTC datetime (naive input is taken as UTC)."""
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")
