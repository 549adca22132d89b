"""Parsing of structured agent output.

Surrounding chatter is tolerated line-wise, but a function call itself must
match the grammar exactly::

    call    := ident "(" [arg ("," arg)*] ")"
    arg     := ident "=" string
    string  := '"' (char | '\\"' | '\\\\')* '"'

Whitespace is allowed between tokens. A backslash followed by anything other
than ``"`` or ``\\`` is kept literally; raw newlines inside strings are fine.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .domain import ACTION_TYPES, AgentAction, DoNothing, Reply
from .errors import (
    ActionSyntaxError,
    Ambiguous,
    DuplicateTag,
    MissingArgument,
    MissingTag,
    MultipleOptionMarkers,
    NoOptionMarker,
    NoRating,
    OutOfRange,
    ParseError,
    TrailingGarbage,
    UnexpectedArgument,
    UnknownFunction,
    UnterminatedString,
)

SOFT_WORD_LIMIT = 15
STAGE_FIELDS = ("cue", "interpret", "goal", "retrieve", "evaluate")


class Dialect(str, Enum):
    SIP = "sip"  # [Cue] [Interpret] [Goal] [Retrieve] [Evaluate]
    MICRO = "micro"  # [Info] [Interpret] [Goal] [Plan] [Check]

    @property
    def tags(self) -> tuple[str, ...]:
        return _DIALECT_TAGS[self]


_DIALECT_TAGS = {
    Dialect.SIP: ("Cue", "Interpret", "Goal", "Retrieve", "Evaluate"),
    Dialect.MICRO: ("Info", "Interpret", "Goal", "Plan", "Check"),
}
ALL_STAGE_TAGS = tuple(dict.fromkeys(_DIALECT_TAGS[Dialect.SIP] + _DIALECT_TAGS[Dialect.MICRO]))


@dataclass(frozen=True)
class SipAnalysis:
    cue: str
    interpret: str
    goal: str
    retrieve: str
    evaluate: str
    dialect: Dialect = Dialect.SIP
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for name in STAGE_FIELDS:
            if not getattr(self, name):
                raise ValueError(f"stage {name!r} is empty")

    def render(self) -> str:
        tags = self.dialect.tags
        return "\n".join(f"[{tag}] {getattr(self, name)}" for tag, name in zip(tags, STAGE_FIELDS))

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in STAGE_FIELDS}
        d["dialect"] = self.dialect.value
        return d


@dataclass(frozen=True)
class ActionSelection:
    option_number: int
    thought: str
    action: AgentAction
    warnings: tuple[str, ...] = field(default=(), compare=False)


# --- stage-tagged sentences -------------------------------------------------

_LEADING_TAG = re.compile(r"^\s*(?:[-*•]\s*)?(?:\*\*)?\[([A-Za-z]+)\](?:\*\*)?:?\s*(.*)$")


def parse_sip_analysis(raw: str, dialect: Dialect | str = Dialect.SIP) -> SipAnalysis:
    """Extract the five stage sentences; tags identify fields, order does not matter."""
    dialect = Dialect(dialect)
    by_tag = {t.lower(): (t, name) for t, name in zip(dialect.tags, STAGE_FIELDS)}
    found: dict[str, str] = {}
    warnings: list[str] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        m = _LEADING_TAG.match(line)
        if m is None:
            warnings.append(f"line {lineno}: untagged text ignored")
            continue
        key = m.group(1).lower()
        if key == "action" and dialect is Dialect.MICRO:
            continue
        if key not in by_tag:
            warnings.append(f"line {lineno}: tag [{m.group(1)}] not in {dialect.value} dialect, ignored")
            continue
        tag, name = by_tag[key]
        if name in found:
            raise DuplicateTag(tag)
        text = m.group(2).strip()
        if not text:
            raise MissingTag(tag)
        if len(text.split()) > SOFT_WORD_LIMIT:
            warnings.append(f"[{tag}] exceeds {SOFT_WORD_LIMIT} words")
        found[name] = text
    for tag, name in zip(dialect.tags, STAGE_FIELDS):
        if name not in found:
            raise MissingTag(tag)
    return SipAnalysis(dialect=dialect, warnings=tuple(warnings), **found)


# --- function calls ---------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            got = repr(self.peek()) if self.peek() else "end of input"
            raise ActionSyntaxError(f"expected {ch!r} at offset {self.pos}, got {got}")
        self.pos += 1

    def ident(self) -> str:
        self.skip_ws()
        m = _IDENT.match(self.text, self.pos)
        if m is None:
            raise ActionSyntaxError(f"expected identifier at offset {self.pos}")
        self.pos = m.end()
        return m.group(0)

    def string(self) -> str:
        self.expect('"')
        out = []
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == '"':
                self.pos += 1
                return "".join(out)
            if ch == "\\" and self.pos + 1 < len(text) and text[self.pos + 1] in '"\\':
                out.append(text[self.pos + 1])
                self.pos += 2
                continue
            out.append(ch)
            self.pos += 1
        raise UnterminatedString("string literal is not closed")


def parse_action_call(raw: str) -> AgentAction:
    """Parse exactly one call such as ``reply(content="hi", author="x", original_tweet_id="3")``."""
    sc = _Scanner(raw)
    name = sc.ident()
    if name not in ACTION_TYPES:
        raise UnknownFunction(name)
    cls = ACTION_TYPES[name]
    sc.expect("(")
    args: dict[str, str] = {}
    sc.skip_ws()
    if sc.peek() == ")":
        sc.pos += 1
    else:
        while True:
            arg = sc.ident()
            sc.expect("=")
            value = sc.string()
            if arg not in cls.arg_names or arg in args:
                raise UnexpectedArgument(arg)
            args[arg] = value
            sc.skip_ws()
            if sc.peek() == ",":
                sc.pos += 1
                continue
            sc.expect(")")
            break
    sc.skip_ws()
    if sc.pos != len(raw):
        raise TrailingGarbage(f"unexpected text after call: {raw[sc.pos:sc.pos + 20]!r}")
    for arg in cls.arg_names:
        if arg not in args:
            raise MissingArgument(arg)
    try:
        return cls(**args)
    except ValueError as exc:
        raise ActionSyntaxError(str(exc)) from exc


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def render_action(action: AgentAction) -> str:
    """Canonical call text; ``parse_action_call(render_action(a)) == a``."""
    args = ", ".join(f"{name}={_quote(getattr(action, name))}" for name in action.arg_names)
    return f"{action.function}({args})"


# --- option blocks ----------------------------------------------------------

_OPTION = re.compile(r"\[\s*OPTION\s+(\d+)\s*\]", re.IGNORECASE)
_THOUGHT = re.compile(r"\bThought\s*[:：]", re.IGNORECASE)
_ACTION = re.compile(r"\bAction\s*[:：]", re.IGNORECASE)
_TAG_TOKEN = re.compile(r"\[(" + "|".join(ALL_STAGE_TAGS) + r")\]", re.IGNORECASE)


def _clean_call(text: str) -> str:
    text = text.strip()
    # models like to wrap code in backticks
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith(("python", "text")):
            text = text.split("\n", 1)[1] if "\n" in text else ""
    return text.strip().strip("`").strip()


def parse_action_selection(raw: str) -> ActionSelection:
    """``[OPTION n] Thought: ... Action: call(...)`` -> ActionSelection."""
    markers = list(_OPTION.finditer(raw))
    if not markers:
        raise NoOptionMarker("no [OPTION n] marker found")
    if len(markers) > 1:
        raise MultipleOptionMarkers(f"{len(markers)} option markers found")
    marker = markers[0]
    number = int(marker.group(1))
    if not 1 <= number <= 4:
        raise ParseError(f"option number {number} outside 1..4")
    rest = raw[marker.end():]
    actions = list(_ACTION.finditer(rest))
    if not actions:
        raise ParseError("no 'Action:' found after the option marker")
    action_m = actions[0]
    warnings = []
    thought_m = _THOUGHT.search(rest, 0, action_m.start())
    if thought_m is None:
        warnings.append("no Thought given")
        thought = ""
    else:
        thought = rest[thought_m.end():action_m.start()]
        thought = thought.strip().strip("→").strip()
    if thought and not _TAG_TOKEN.search(thought):
        warnings.append("thought references no stage tag")
    action = parse_action_call(_clean_call(rest[action_m.end():]))
    return ActionSelection(number, thought, action, tuple(warnings))


_MICRO_ACTION = re.compile(r"^\s*(?:\*\*)?\[Action\](?:\*\*)?:?\s*(.*)$", re.IGNORECASE | re.MULTILINE)


def parse_micro_reply(raw: str) -> tuple[SipAnalysis, Reply]:
    """Five [Info]..[Check] sentences followed by an ``[Action] reply(...)`` line."""
    analysis = parse_sip_analysis(raw, Dialect.MICRO)
    calls = _MICRO_ACTION.findall(raw)
    if not calls:
        raise ParseError("no [Action] line found")
    if len(calls) > 1:
        raise ParseError("more than one [Action] line")
    action = parse_action_call(_clean_call(calls[0]))
    if not isinstance(action, Reply):
        raise UnknownFunction(action.function if not isinstance(action, DoNothing) else "do_nothing")
    return analysis, action


# --- Likert -----------------------------------------------------------------

_NUMBER = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?(?!\w)")


def parse_likert(raw: str) -> int:
    """First integer token in ``raw`` as a 1-5 rating.

    Repeats of the same number are fine ("5 (Very much) ... 5"); two different
    numbers are Ambiguous, as is a decimal.
    """
    tokens = _NUMBER.findall(raw)
    if not tokens:
        raise NoRating(f"no rating in {raw[:60]!r}")
    if len(set(tokens)) > 1:
        raise Ambiguous(f"conflicting numbers {sorted(set(tokens))} in {raw[:60]!r}")
    token = tokens[0]
    if "." in token:
        raise Ambiguous(f"non-integer rating {token!r}")
    value = int(token)
    if not 1 <= value <= 5:
        raise OutOfRange(value)
    return value
