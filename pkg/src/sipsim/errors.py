"""Exception hierarchy shared across the package."""
from __future__ import annotations


class SipSimError(Exception):
    """Base class for every error raised by sipsim."""


# --- domain / dataset -------------------------------------------------------

class DataError(SipSimError):
    """Problem with input data (CLI exit code 3)."""


class MissingParent(DataError):
    def __init__(self, item_id: str, parent_id: str):
        super().__init__(f"item {item_id!r} references unknown parent {parent_id!r}")
        self.item_id = item_id
        self.parent_id = parent_id


class CycleDetected(DataError):
    def __init__(self, item_id: str):
        super().__init__(f"parent chain of item {item_id!r} loops")
        self.item_id = item_id


class SchemaError(DataError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class IntegrityError(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class DuplicateResponse(DataError):
    pass


class TaxonomyMismatch(DataError):
    pass


# --- prompts ----------------------------------------------------------------

class TemplateError(SipSimError):
    pass


class MissingPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"no binding for placeholder {{{name}}}")
        self.name = name


class UnknownPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"binding {name!r} does not appear in the template")
        self.name = name


# --- parser -----------------------------------------------------------------

class ParseError(SipSimError):
    """Agent output did not match the expected structure."""


class MissingTag(ParseError):
    def __init__(self, tag: str):
        super().__init__(f"stage tag [{tag}] missing or empty")
        self.tag = tag


class DuplicateTag(ParseError):
    def __init__(self, tag: str):
        super().__init__(f"stage tag [{tag}] appears more than once")
        self.tag = tag


class ActionSyntaxError(ParseError):
    """Malformed function-call text."""


class UnknownFunction(ActionSyntaxError):
    def __init__(self, name: str):
        super().__init__(f"unknown function {name!r}")
        self.name = name


class MissingArgument(ActionSyntaxError):
    def __init__(self, name: str):
        super().__init__(f"missing argument {name!r}")
        self.name = name


class UnexpectedArgument(ActionSyntaxError):
    def __init__(self, name: str):
        super().__init__(f"unexpected argument {name!r}")
        self.name = name


class UnterminatedString(ActionSyntaxError):
    pass


class TrailingGarbage(ActionSyntaxError):
    pass


class NoOptionMarker(ParseError):
    pass


class MultipleOptionMarkers(ParseError):
    pass


class NoRating(ParseError):
    pass


class OutOfRange(ParseError):
    def __init__(self, value: int):
        super().__init__(f"rating {value} outside 1..5")
        self.value = value


class Ambiguous(ParseError):
    pass


# --- backends / agent -------------------------------------------------------

class BackendError(SipSimError):
    """A chat backend call failed (after any retries)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class BackendTimeout(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, status_code: int, attempts: int = 1):
        super().__init__(f"HTTP {status_code}", attempts)
        self.status_code = status_code


class MalformedResponse(BackendError):
    pass


class ScriptMiss(BackendError):
    def __init__(self, key: tuple):
        super().__init__(f"mock script has no response for {key!r}")
        self.key = key


class InvalidResponse(SipSimError):
    def __init__(self, raw: str, cause: Exception):
        super().__init__(f"could not read a rating from {raw!r}: {cause}")
        self.raw = raw
        self.cause = cause


class SystemicBackendFailure(SipSimError):
    """Too many backend failures within one step / administration (CLI exit 4)."""


# --- metrics ----------------------------------------------------------------

class MetricError(SipSimError):
    pass


class EmptyStep(MetricError):
    pass


class EmptySeries(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class DegenerateVariance(MetricError):
    pass


class TooFewRespondents(MetricError):
    pass


class EmptyInput(MetricError):
    pass


class ItemSetMismatch(MetricError):
    pass


# --- misc -------------------------------------------------------------------

class ConfigError(SipSimError):
    """Invalid run configuration (CLI exit code 2)."""


class UnknownAgent(SipSimError):
    pass
