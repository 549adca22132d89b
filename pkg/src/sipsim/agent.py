"""The SIP decision procedure wired to a chat backend, questionnaire answering,
and the annotators that label generated text."""
from __future__ import annotations

import json
import logging
import re
import zlib
from dataclasses import dataclass, field
from datetime import datetime
from typing import TYPE_CHECKING, Mapping, Protocol, Sequence

from .backend import ChatBackend, ChatMessage, ChatRequest
from .domain import (
    STANCE_LABELS,
    AgentAction,
    AgentProfile,
    ContentItem,
    DoNothing,
    Labels,
    Like,
    Reply,
    Retweet,
    Stance,
    Taxonomy,
    format_timestamp,
)
from .errors import BackendError, InvalidResponse, ParseError
from .memory import MemoryConfig, Notification, SocialMemory
from .parser import (
    ActionSelection,
    Dialect,
    SipAnalysis,
    parse_action_selection,
    parse_likert,
    parse_sip_analysis,
)
from .prompts import ContextBundle, PromptTemplate, default_templates, render, render_questionnaire

if TYPE_CHECKING:
    from .siptest import QuestionnaireItem, Scenario

log = logging.getLogger(__name__)

OK = "ok"
SIP_PARSE_ERROR = "sip_parse_error"
ACTION_PARSE_ERROR = "action_parse_error"
BACKEND_FAILURE = "backend_failure"
INVALID_TARGET = "invalid_target"


@dataclass(frozen=True)
class AgentConfig:
    temperature: float = 0.7
    questionnaire_temperature: float = 0.0
    reasoning: bool = False
    model: str = ""
    seed: int = 0
    memory: MemoryConfig = field(default_factory=MemoryConfig)


def request_seed(run_seed: int, agent_id: str, step: int, template_id: str) -> int:
    """Stable per-call sampling seed for backends that honour one."""
    return zlib.crc32(f"{run_seed}:{agent_id}:{step}:{template_id}".encode()) & 0x7FFFFFFF


@dataclass
class AgentState:
    profile: AgentProfile
    memory: SocialMemory
    stance: Stance | None = None
    emotion: str | None = None
    last_active_step: int = -1

    @property
    def agent_id(self) -> str:
        return self.profile.agent_id

    @property
    def name(self) -> str:
        return self.profile.name

    def role_description(self) -> str:
        p = self.profile
        bits = [f"{p.name}"]
        if p.gender or p.country:
            bits.append(f"({', '.join(x for x in (p.gender, p.country) if x)})")
        text = " ".join(bits) + "."
        if p.signature:
            text += f" Signature: {p.signature}."
        if self.stance is not None:
            text += f" Current stance on the event: {self.stance.value}."
        if self.emotion:
            text += f" Current mood: {self.emotion}."
        return text


@dataclass(frozen=True)
class Observation:
    """What one agent sees of the frozen world at one step."""

    step: int
    current_time: datetime
    trigger_news: str
    feed: Sequence[ContentItem]
    notifications: Sequence[Notification]
    items: Mapping[str, ContentItem]
    names: Mapping[str, str]


@dataclass
class Decision:
    agent_id: str
    step: int
    action: AgentAction
    parse_status: str
    analysis: SipAnalysis | None = None
    selection: ActionSelection | None = None
    sip_raw: str = ""
    action_raw: str = ""
    error: str = ""
    backend_calls: int = 0


# --- rendering helpers ------------------------------------------------------

def render_feed(feed: Sequence[ContentItem], names: Mapping[str, str]) -> str:
    if not feed:
        return "(empty)"
    lines = []
    for it in feed:
        author = names.get(it.author_id, it.author_id)
        where = f" (reply to {it.parent_id})" if it.parent_id else f" (retweet of {it.quoted_id})" if it.quoted_id else ""
        text = " ".join(it.text.split())
        lines.append(f'- id={it.item_id} author="{author}" step={it.step}{where}: {text}')
    return "\n".join(lines)


def render_notifications(notifications: Sequence[Notification]) -> str:
    if not notifications:
        return "(none)"
    return "\n".join(f"- {n.grounded_text()}" for n in notifications)


def _counterpart(action: AgentAction, items: Mapping[str, ContentItem]) -> str | None:
    target = None
    if isinstance(action, (Reply, Retweet)):
        target = action.original_tweet_id
    elif isinstance(action, Like):
        target = action.item_id
    item = items.get(target) if target else None
    return item.author_id if item else None


def target_exists(action: AgentAction, items: Mapping[str, ContentItem]) -> bool:
    if isinstance(action, (Reply, Retweet)):
        return action.original_tweet_id in items
    if isinstance(action, Like):
        return action.item_id in items
    return True


# --- the decision procedure -------------------------------------------------

def decide(
    state: AgentState,
    obs: Observation,
    backend: ChatBackend,
    config: AgentConfig | None = None,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> Decision:
    """Ground -> retrieve -> SIP analysis -> action selection -> learn.

    Two backend calls (three with ``config.reasoning``). Parse failures and
    backend failures never raise: the agent does nothing and the decision
    carries the failure status.
    """
    config = config or AgentConfig()
    templates = templates or default_templates()
    mem = state.memory
    step = obs.step
    chat_history = "\n".join(e.text for e in mem.buffer if e.step < step) or "(none)"

    mem.ground(obs.feed, obs.notifications, step)
    query = obs.trigger_news + " " + (obs.feed[0].text if obs.feed else "")
    retrieved = mem.retrieve(query, "cognitive", current_step=step) + mem.retrieve(query, "behavior", current_step=step)
    personal = "\n".join(f"- {e.summary()}" for e in retrieved) or "(none)"

    decision = Decision(state.agent_id, step, DoNothing(), OK)

    def ask(messages: list[ChatMessage], template_id: str) -> str:
        req = ChatRequest(
            tuple(messages),
            temperature=config.temperature,
            seed=request_seed(config.seed, state.agent_id, step, template_id),
            model=config.model,
            agent_id=state.agent_id,
            step=step,
            template_id=template_id,
        )
        decision.backend_calls += 1
        return backend.complete(req)

    try:
        if config.reasoning and len(mem.buffer):
            mem.reason(
                backend,
                templates["Reason"],
                agent_id=state.agent_id,
                agent_name=state.name,
                step=step,
                temperature=config.temperature,
                seed=request_seed(config.seed, state.agent_id, step, "Reason"),
            )
            decision.backend_calls += 1

        sip_prompt = render(
            templates["SipAnalysis"],
            ContextBundle(
                agent_name=state.name,
                current_time=format_timestamp(obs.current_time),
                role_description=state.role_description(),
                trigger_news=obs.trigger_news,
                personal_history=personal,
                chat_history=chat_history,
                reddit_feed=render_feed(obs.feed, obs.names),
                info_box=render_notifications(obs.notifications),
            ),
        )
        messages = [ChatMessage("user", sip_prompt)]
        decision.sip_raw = ask(messages, "SipAnalysis")
        try:
            decision.analysis = parse_sip_analysis(decision.sip_raw, Dialect.SIP)
        except ParseError as exc:
            decision.parse_status = SIP_PARSE_ERROR
            decision.error = f"{type(exc).__name__}: {exc}"
            log.warning("agent %s step %d: ParseFailure in SIP analysis: %s", state.agent_id, step, exc)

        action_prompt = render(templates["ActionSelect"], {"sip_analysis": decision.sip_raw.strip()})
        messages += [ChatMessage("assistant", decision.sip_raw), ChatMessage("user", action_prompt)]
        decision.action_raw = ask(messages, "ActionSelect")
    except BackendError as exc:
        decision.parse_status = BACKEND_FAILURE
        decision.error = f"{type(exc).__name__}: {exc}"
        decision.action = DoNothing()
        log.warning("agent %s step %d: BackendFailure: %s", state.agent_id, step, exc)
        mem.learn(decision.analysis, decision.action, "backend failure", step)
        return decision

    try:
        decision.selection = parse_action_selection(decision.action_raw)
    except ParseError as exc:
        decision.parse_status = ACTION_PARSE_ERROR
        decision.error = f"{type(exc).__name__}: {exc}"
        log.warning("agent %s step %d: ParseFailure in action: %s", state.agent_id, step, exc)
    else:
        if target_exists(decision.selection.action, obs.items):
            decision.action = decision.selection.action
        else:
            decision.parse_status = INVALID_TARGET
            decision.error = "action targets an item that is not visible"
            log.warning("agent %s step %d: action targets unknown item", state.agent_id, step)

    if decision.selection is not None and decision.parse_status in (OK, SIP_PARSE_ERROR):
        outcome = f"chose option {decision.selection.option_number}: {decision.selection.thought}"
    else:
        outcome = decision.parse_status
    mem.learn(decision.analysis, decision.action, outcome, step, _counterpart(decision.action, obs.items))
    state.last_active_step = step
    return decision


# --- questionnaire ----------------------------------------------------------

def questionnaire_request(
    state: AgentState,
    scenario: "Scenario",
    item: "QuestionnaireItem",
    *,
    step: int = 0,
    temperature: float = 0.0,
    seed: int = 0,
    context: Sequence[ChatMessage] = (),
    template: PromptTemplate | None = None,
    model: str = "",
) -> ChatRequest:
    template = template or default_templates()["Questionnaire"]
    prompt = render(
        template,
        {
            "agent_name": state.name,
            "role_description": state.role_description(),
            "story": scenario.story,
            "question": render_questionnaire(item, scenario),
        },
    )
    template_id = f"Questionnaire:{item.item_id}"
    return ChatRequest(
        tuple(context) + (ChatMessage("user", prompt),),
        temperature=temperature,
        seed=request_seed(seed, state.agent_id, step, template_id),
        model=model,
        agent_id=state.agent_id,
        step=step,
        template_id=template_id,
    )


def answer_questionnaire(
    state: AgentState,
    scenario: "Scenario",
    item: "QuestionnaireItem",
    backend: ChatBackend,
    **kwargs,
) -> int:
    """Render the item for the scenario, ask the backend, read a 1-5 rating.

    Raises InvalidResponse (raw text attached) when no rating can be read.
    """
    raw = backend.complete(questionnaire_request(state, scenario, item, **kwargs))
    try:
        return parse_likert(raw)
    except ParseError as exc:
        raise InvalidResponse(raw, exc) from exc


# --- annotators -------------------------------------------------------------

class Annotator(Protocol):
    def annotate(self, agent_id: str, step: int, action: AgentAction, text: str) -> Labels | None: ...


class NullAnnotator:
    def annotate(self, agent_id, step, action, text):
        return None


class TableAnnotator:
    """Ground-truth labels looked up by (agent_id, step)."""

    def __init__(self, table: Mapping[tuple[str, int], Labels]):
        self.table = dict(table)

    def annotate(self, agent_id, step, action, text):
        return self.table.get((agent_id, step))


_LABEL_LINE = re.compile(r"^\s*[-*]?\s*(stance|content_type|content type|emotion)\s*[:=]\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)


def parse_labels(raw: str, taxonomy: Taxonomy) -> Labels:
    """Read ``stance: x / content_type: y / emotion: z`` lines (or a JSON object)."""
    values: dict[str, str] = {}
    text = raw.strip()
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad label JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise ParseError("label JSON must be an object")
        values = {str(k): str(v) for k, v in obj.items()}
    else:
        for key, value in _LABEL_LINE.findall(raw):
            values[key.lower().replace(" ", "_")] = value
    missing = [k for k in ("stance", "content_type", "emotion") if k not in values]
    if missing:
        raise ParseError(f"labels missing {', '.join(missing)}")
    norm = {k: v.strip().strip("\"'`.").lower().replace(" ", "_") for k, v in values.items()}
    if norm["stance"] not in STANCE_LABELS:
        raise ParseError(f"unknown stance {norm['stance']!r}")
    if norm["emotion"] not in taxonomy.emotion:
        raise ParseError(f"unknown emotion {norm['emotion']!r}")
    return Labels(Stance(norm["stance"]), taxonomy.content_type.coerce(norm["content_type"]), norm["emotion"])


class BackendAnnotator:
    """Asks the chat backend (template ``Annotate``) to label each generated text."""

    def __init__(
        self,
        backend: ChatBackend,
        taxonomy: Taxonomy | None = None,
        topic: str = "",
        template: PromptTemplate | None = None,
        model: str = "",
    ):
        self.backend = backend
        self.taxonomy = taxonomy or Taxonomy()
        self.topic = topic
        self.template = template or default_templates()["Annotate"]
        self.model = model

    def annotate(self, agent_id, step, action, text):
        prompt = render(
            self.template,
            {
                "topic": self.topic or "(unspecified)",
                "author": agent_id,
                "text": text,
                "stance_labels": ", ".join(STANCE_LABELS.labels),
                "content_type_labels": ", ".join(self.taxonomy.content_type.labels),
                "emotion_labels": ", ".join(self.taxonomy.emotion.labels),
            },
        )
        req = ChatRequest(
            (ChatMessage("user", prompt),),
            temperature=0.0,
            model=self.model,
            agent_id=agent_id,
            step=step,
            template_id=self.template.template_id,
        )
        try:
            return parse_labels(self.backend.complete(req), self.taxonomy)
        except (ParseError, BackendError) as exc:
            log.warning("annotation failed for %s at step %d: %s", agent_id, step, exc)
            return None
