"""Social memory: long-term cognitive and behaviour stores, the short-term
interaction buffer, and the retrieve / reason / learn / ground actions."""
from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .backend import ChatBackend, ChatMessage, ChatRequest
from .parser import SipAnalysis, render_action
from .prompts import PromptTemplate, render

if TYPE_CHECKING:
    from .domain import AgentAction, ContentItem

log = logging.getLogger(__name__)

_WORD = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> frozenset[str]:
    return frozenset(w.lower() for w in _WORD.findall(text))


class CognitiveKind(str, Enum):
    NORM = "norm"
    ROLE = "role"
    SCHEMA = "schema"
    RULE = "rule"


class Source(str, Enum):
    GROUNDED = "grounded"
    REASONED = "reasoned"
    RETRIEVED = "retrieved"


@dataclass(frozen=True)
class CognitiveEntry:
    entry_id: str
    kind: CognitiveKind
    text: str
    tags: frozenset[str] = frozenset()
    created_step: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError("cognitive entry text must be non-empty")
        object.__setattr__(self, "tags", frozenset(t.lower() for t in self.tags))

    @property
    def step(self) -> int:
        return self.created_step

    def tokens(self) -> frozenset[str]:
        return tokenize(self.text) | self.tags

    def summary(self) -> str:
        return f"({self.kind.value}) {self.text}"

    def to_dict(self) -> dict:
        return {
            "store": "cognitive",
            "entry_id": self.entry_id,
            "kind": self.kind.value,
            "text": self.text,
            "tags": sorted(self.tags),
            "created_step": self.created_step,
        }


@dataclass(frozen=True)
class BehaviorEpisode:
    episode_id: str
    step: int
    action: str
    outcome: str
    counterpart_id: str | None = None
    salience: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.salience <= 1.0:
            raise ValueError("salience must lie in [0, 1]")

    @property
    def entry_id(self) -> str:
        return self.episode_id

    @property
    def text(self) -> str:
        return f"{self.action} -> {self.outcome}"

    def tokens(self) -> frozenset[str]:
        return tokenize(self.text)

    def summary(self) -> str:
        return f"(step {self.step}) {self.text}"

    def to_dict(self) -> dict:
        return {
            "store": "behavior",
            "episode_id": self.episode_id,
            "step": self.step,
            "action": self.action,
            "outcome": self.outcome,
            "counterpart_id": self.counterpart_id,
            "salience": self.salience,
        }


@dataclass(frozen=True)
class BufferEntry:
    source: Source
    text: str
    step: int

    def to_dict(self) -> dict:
        return {"store": "buffer", "source": self.source.value, "text": self.text, "step": self.step}


class InteractionBuffer:
    """Bounded short-term memory; appending past capacity evicts the oldest entry."""

    def __init__(self, capacity: int = 20, entries: Iterable[BufferEntry] = ()):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self._entries: deque[BufferEntry] = deque(entries, maxlen=capacity)

    def append(self, entry: BufferEntry) -> None:
        self._entries.append(entry)

    def extend(self, entries: Iterable[BufferEntry]) -> None:
        self._entries.extend(entries)

    @property
    def entries(self) -> list[BufferEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def render(self) -> str:
        return "\n".join(f"[{e.source.value} @ step {e.step}] {e.text}" for e in self._entries)


@dataclass(frozen=True)
class MemoryConfig:
    w_rel: float = 0.5
    w_rec: float = 0.5
    decay: float = 0.99
    capacity: int = 20
    k: int = 3

    def __post_init__(self):
        if self.w_rel < 0 or self.w_rec < 0:
            raise ValueError("retrieval weights must be non-negative")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.capacity < 1 or self.k < 1:
            raise ValueError("capacity and k must be positive")


# --- scoring ----------------------------------------------------------------

def relevance(query_tokens: frozenset[str], entry_tokens: frozenset[str]) -> float:
    """Jaccard overlap between query and entry token sets."""
    union = query_tokens | entry_tokens
    if not union:
        return 0.0
    return len(query_tokens & entry_tokens) / len(union)


def recency(entry_step: int, current_step: int, decay: float) -> float:
    return decay ** max(0, current_step - entry_step)


def score(entry, query_tokens: frozenset[str], current_step: int, cfg: MemoryConfig) -> float:
    return cfg.w_rel * relevance(query_tokens, entry.tokens()) + cfg.w_rec * recency(entry.step, current_step, cfg.decay)


def rank_entries(entries: Sequence, query: str, k: int, current_step: int, cfg: MemoryConfig) -> list:
    """Top ``k`` entries by score, ties broken by ascending entry_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = tokenize(query)
    scored = [(-score(e, q, current_step, cfg), e.entry_id, e) for e in entries]
    scored.sort(key=lambda t: (t[0], t[1]))
    return [e for _, _, e in scored[:k]]


# --- the memory object ------------------------------------------------------

class SocialMemory:
    """Per-agent memory. Not thread-safe; the engine gives each agent one worker at a time."""

    def __init__(self, config: MemoryConfig | None = None):
        self.config = config or MemoryConfig()
        self.cognitive: list[CognitiveEntry] = []
        self.behavior: list[BehaviorEpisode] = []
        self.buffer = InteractionBuffer(self.config.capacity)

    def add_cognitive(self, kind: CognitiveKind, text: str, tags: Iterable[str] = (), step: int = 0) -> CognitiveEntry:
        entry = CognitiveEntry(f"c{len(self.cognitive):06d}", CognitiveKind(kind), text, frozenset(tags), step)
        self.cognitive.append(entry)
        return entry

    def retrieve(self, query: str, store: str, k: int | None = None, current_step: int = 0) -> list:
        """Rank one long-term store against ``query`` and copy the hits into the buffer."""
        entries = self.cognitive if store == "cognitive" else self.behavior if store == "behavior" else None
        if entries is None:
            raise ValueError(f"unknown store {store!r}")
        if not entries:
            log.debug("retrieve from empty %s store", store)
            return []
        hits = rank_entries(entries, query, k or self.config.k, current_step, self.config)
        self.buffer.extend(BufferEntry(Source.RETRIEVED, e.summary(), current_step) for e in hits)
        return hits

    def reason(
        self,
        backend: ChatBackend,
        template: PromptTemplate,
        *,
        agent_id: str,
        agent_name: str,
        step: int,
        temperature: float = 0.7,
        seed: int | None = None,
    ) -> BufferEntry:
        if not len(self.buffer):
            raise ValueError("cannot reason over an empty interaction buffer")
        prompt = render(template, {"agent_name": agent_name, "buffer": self.buffer.render()})
        request = ChatRequest(
            (ChatMessage("user", prompt),),
            temperature=temperature,
            seed=seed,
            agent_id=agent_id,
            step=step,
            template_id=template.template_id,
        )
        text = backend.complete(request)
        entry = BufferEntry(Source.REASONED, text.strip(), step)
        self.buffer.append(entry)
        return entry

    def learn(
        self,
        analysis: SipAnalysis | None,
        action: "AgentAction",
        outcome: str,
        step: int,
        counterpart_id: str | None = None,
    ) -> None:
        self.behavior.append(
            BehaviorEpisode(f"b{len(self.behavior):06d}", step, render_action(action), outcome, counterpart_id)
        )
        if analysis is None:
            return
        new_tokens = tokenize(analysis.interpret)
        if not new_tokens:
            return
        if any(tokenize(e.text) == new_tokens for e in self.cognitive):
            return
        self.add_cognitive(CognitiveKind.SCHEMA, analysis.interpret, step=step)

    def ground(self, feed: Sequence["ContentItem"], notifications: Sequence["Notification"], step: int) -> None:
        """Notifications first, then feed items in the order given (newest first)."""
        entries = [BufferEntry(Source.GROUNDED, n.grounded_text(), step) for n in notifications]
        entries += [BufferEntry(Source.GROUNDED, grounded_item_text(it), step) for it in feed]
        self.buffer.extend(entries)

    # --- persistence --------------------------------------------------------

    def to_records(self) -> list[dict]:
        return (
            [e.to_dict() for e in self.cognitive]
            + [e.to_dict() for e in self.behavior]
            + [e.to_dict() for e in self.buffer]
        )

    @classmethod
    def from_records(cls, records: Iterable[dict], config: MemoryConfig | None = None) -> "SocialMemory":
        mem = cls(config)
        for r in records:
            store = r["store"]
            if store == "cognitive":
                mem.cognitive.append(
                    CognitiveEntry(r["entry_id"], CognitiveKind(r["kind"]), r["text"], frozenset(r["tags"]), r["created_step"])
                )
            elif store == "behavior":
                mem.behavior.append(
                    BehaviorEpisode(r["episode_id"], r["step"], r["action"], r["outcome"], r["counterpart_id"], r["salience"])
                )
            elif store == "buffer":
                mem.buffer.append(BufferEntry(Source(r["source"]), r["text"], r["step"]))
            else:
                raise ValueError(f"unknown memory store {store!r}")
        return mem

    def dump(self, path: str | Path) -> None:
        lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in self.to_records()]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, config: MemoryConfig | None = None) -> "SocialMemory":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_records((json.loads(line) for line in fh if line.strip()), config)


def _one_line(text: str) -> str:
    return " ".join(text.split())


def grounded_item_text(item: "ContentItem") -> str:
    return f"{item.author_id}: {_one_line(item.text)} (step {item.step})"


@dataclass(frozen=True)
class Notification:
    kind: str  # reply | retweet | like
    actor_id: str
    item_id: str  # the viewer's item that was acted on
    step: int
    text: str = ""
    source_item_id: str | None = None  # the reply / retweet item, if any

    def grounded_text(self) -> str:
        what = {"reply": "replied to", "retweet": "retweeted", "like": "liked"}.get(self.kind, self.kind)
        body = f"{what} your item {self.item_id}"
        if self.text:
            body += f": {_one_line(self.text)}"
        return f"{self.actor_id}: {body} (step {self.step})"


__all__ = [
    "BehaviorEpisode",
    "BufferEntry",
    "CognitiveEntry",
    "CognitiveKind",
    "InteractionBuffer",
    "MemoryConfig",
    "Notification",
    "SocialMemory",
    "Source",
    "rank_entries",
    "relevance",
    "recency",
    "tokenize",
]
