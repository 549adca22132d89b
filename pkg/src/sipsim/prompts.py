"""Prompt templates shipped as data files, rendered by exact placeholder substitution.

Placeholders are ``{name}``; a literal brace is written doubled (``{{`` / ``}}``).
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

from .errors import MissingPlaceholder, TemplateError, UnknownPlaceholder

if TYPE_CHECKING:
    from .siptest import QuestionnaireItem, Scenario

TEMPLATE_IDS = ("SipAnalysis", "ActionSelect", "MicroReply", "Questionnaire", "Annotate", "Reason")

_TOKEN = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}|[{}]")


def _segments(body: str) -> list[tuple[str, str]]:
    """Split ``body`` into ("text", s) and ("slot", name) pieces."""
    out: list[tuple[str, str]] = []
    pos = 0
    for m in _TOKEN.finditer(body):
        if m.start() > pos:
            out.append(("text", body[pos:m.start()]))
        tok = m.group(0)
        if tok == "{{":
            out.append(("text", "{"))
        elif tok == "}}":
            out.append(("text", "}"))
        elif m.group(1):
            out.append(("slot", m.group(1)))
        else:
            line = body.count("\n", 0, m.start()) + 1
            raise TemplateError(f"unescaped {tok!r} on line {line}")
        pos = m.end()
    if pos < len(body):
        out.append(("text", body[pos:]))
    return out


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_placeholders: frozenset[str]

    def __post_init__(self):
        found = {name for kind, name in _segments(self.body) if kind == "slot"}
        required = frozenset(self.required_placeholders)
        object.__setattr__(self, "required_placeholders", required)
        if found != required:
            raise TemplateError(
                f"template {self.template_id}: placeholders in body {sorted(found)} "
                f"do not match declared {sorted(required)}"
            )

    @classmethod
    def from_body(cls, template_id: str, body: str) -> "PromptTemplate":
        """Build a template whose placeholder set is read off the body."""
        names = frozenset(name for kind, name in _segments(body) if kind == "slot")
        return cls(template_id, body, names)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ContextBundle:
    """Values for the simulation templates; ``None`` means "not bound"."""

    agent_name: str | None = None
    current_time: str | None = None
    role_description: str | None = None
    trigger_news: str | None = None
    personal_history: str | None = None
    chat_history: str | None = None
    reddit_feed: str | None = None
    info_box: str | None = None
    sip_analysis: str | None = None
    your_comment: str | None = None
    reply_comment: str | None = None
    reply_author: str | None = None
    reply_id: str | None = None
    notifications: str | None = None

    def bindings(self) -> dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def render(
    template: PromptTemplate,
    bundle: ContextBundle | Mapping[str, str],
    *,
    strict: bool = False,
) -> str:
    """Substitute every placeholder of ``template`` with its bound value.

    Raises MissingPlaceholder for an unbound name; with ``strict`` also
    UnknownPlaceholder when the bundle binds a name the template lacks.
    """
    values = bundle.bindings() if isinstance(bundle, ContextBundle) else dict(bundle)
    if strict:
        for name in sorted(values):
            if name not in template.required_placeholders:
                raise UnknownPlaceholder(name)
    parts = []
    for kind, piece in _segments(template.body):
        if kind == "text":
            parts.append(piece)
            continue
        value = values.get(piece)
        if value is None:
            raise MissingPlaceholder(piece)
        parts.append(str(value))
    return "".join(parts)


# --- questionnaire ----------------------------------------------------------

_QUESTION_SLOTS = {"SITUATION": "situation_text", "PERSON": "person_label"}


def anchor_line(item: "QuestionnaireItem") -> str:
    low, high = item.anchors
    return f"1 ({low}) - 5 ({high})"


def render_questionnaire(item: "QuestionnaireItem", scenario: "Scenario") -> str:
    """Item question with {SITUATION}/{PERSON} filled in, followed by its Likert anchor line."""
    out = []
    for kind, piece in _segments(item.prompt):
        if kind == "text":
            out.append(piece)
            continue
        attr = _QUESTION_SLOTS.get(piece)
        if attr is None:
            raise TemplateError(f"item {item.item_id} uses unsupported placeholder {{{piece}}}")
        value = getattr(scenario, attr)
        if not value:
            raise MissingPlaceholder(piece)
        out.append(value)
    return "".join(out) + "\n" + anchor_line(item)


# --- loading ----------------------------------------------------------------

def _data_dir() -> Path:
    return Path(str(resources.files("sipsim") / "data" / "templates"))


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Read ``manifest.json`` and its template files from ``directory`` (default: shipped set)."""
    directory = Path(directory) if directory is not None else _data_dir()
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise TemplateError(f"cannot read template manifest in {directory}: {exc}") from exc
    out = {}
    for entry in manifest["templates"]:
        body = (directory / entry["file"]).read_text(encoding="utf-8")
        tpl = PromptTemplate(entry["template_id"], body, frozenset(entry["required_placeholders"]))
        out[tpl.template_id] = tpl
    return out


@lru_cache(maxsize=None)
def default_templates() -> Mapping[str, PromptTemplate]:
    return load_templates()


def template_hashes(templates: Mapping[str, PromptTemplate]) -> dict[str, str]:
    return {tid: tpl.sha256 for tid, tpl in sorted(templates.items())}
