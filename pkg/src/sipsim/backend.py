"""Chat backends: an HTTP client for chat-completions style servers and a
deterministic scripted mock."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import httpx

from .errors import BackendError, BackendTimeout, ConfigError, HttpStatusError, MalformedResponse, ScriptMiss

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}
WILDCARD = "*"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.7
    seed: int | None = None
    model: str = ""
    # routing metadata, never sent over the wire
    agent_id: str = ""
    step: int = 0
    template_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def payload(self) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "http" | "mock"
    endpoint_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    model: str = "gpt-4o-mini"
    timeout: float = 60.0
    max_retries: int = 2
    backoff_base: float = 1.0
    max_parallel: int = 4
    script: str | None = None

    def __post_init__(self):
        if self.kind not in ("http", "mock"):
            raise ConfigError(f"backend kind must be 'http' or 'mock', not {self.kind!r}")
        if self.max_parallel < 1:
            raise ConfigError("backend max_parallel must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("backend timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError("backend max_retries must be >= 0")
        if self.kind == "http" and not self.endpoint_url:
            raise ConfigError("http backend needs endpoint_url")


def complete(backend: ChatBackend, request: ChatRequest) -> str:
    return backend.complete(request)


# --- HTTP -------------------------------------------------------------------

class HttpBackend:
    """POSTs chat-completions JSON and returns ``choices[0].message.content``.

    Retries 429/5xx responses and transport timeouts with exponential backoff
    (``backoff_base * 2**attempt``). Safe to share between threads.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        api_key: str | None = None,
    ):
        self.config = config
        self._sleep = sleep
        if api_key is None:
            api_key = os.environ.get(config.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._headers = headers
        self._client = client or httpx.Client(timeout=config.timeout)

    def close(self) -> None:
        self._client.close()

    def complete(self, request: ChatRequest) -> str:
        cfg = self.config
        payload = request.payload()
        payload["model"] = request.model or cfg.model
        attempts = cfg.max_retries + 1
        last_status: int | None = None
        for attempt in range(attempts):
            try:
                resp = self._client.post(cfg.endpoint_url, json=payload, headers=self._headers, timeout=cfg.timeout)
            except httpx.TimeoutException:
                last_status = None
                log.warning("backend timeout (attempt %d/%d)", attempt + 1, attempts)
            except httpx.HTTPError as exc:
                raise BackendError(f"transport error: {exc}", attempt + 1) from exc
            else:
                if resp.status_code == 200:
                    return _extract_content(resp)
                if resp.status_code not in RETRYABLE_STATUS:
                    raise HttpStatusError(resp.status_code, attempt + 1)
                last_status = resp.status_code
                log.warning("backend HTTP %d (attempt %d/%d)", resp.status_code, attempt + 1, attempts)
            if attempt + 1 < attempts:
                self._sleep(cfg.backoff_base * 2**attempt)
        if last_status is None:
            raise BackendTimeout(f"timed out after {attempts} attempts", attempts)
        raise HttpStatusError(last_status, attempts)


def _extract_content(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no choices[0].message.content in response: {exc!r}") from exc
    if not isinstance(content, str):
        raise MalformedResponse("message content is not a string")
    return content


# --- mock -------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptEntry:
    agent_id: str
    step: int | str
    template_id: str
    response: str

    def to_dict(self) -> dict:
        return {"agent_id": self.agent_id, "step": self.step, "template_id": self.template_id, "response": self.response}


class MockBackend:
    """Responses keyed by ``(agent_id, step, template_id)``.

    ``"*"`` in a script key matches anything. A template id of the form
    ``"Questionnaire:Q7"`` falls back to ``"Questionnaire"``. Exact keys win
    over wildcards. A ``responder`` callable, when given, answers every
    request the script does not cover.
    """

    def __init__(
        self,
        script: Iterable[ScriptEntry] | Mapping[tuple, str] = (),
        responder: Callable[[ChatRequest], str] | None = None,
    ):
        self._table: dict[tuple[str, str, str], str] = {}
        items = script.items() if isinstance(script, Mapping) else ((
            (e.agent_id, e.step, e.template_id), e.response) for e in script)
        for (agent_id, step, template_id), response in items:
            self._table[(str(agent_id), str(step), str(template_id))] = response
        self._responder = responder
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        entries = []
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    entries.append(ScriptEntry(rec["agent_id"], rec["step"], rec["template_id"], rec["response"]))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ConfigError(f"{path}:{lineno}: bad mock script record ({exc})") from exc
        return cls(entries)

    def lookup(self, agent_id: str, step: int, template_id: str) -> str | None:
        base = template_id.split(":", 1)[0]
        tids = (template_id, base) if base != template_id else (template_id,)
        for tid in tids:
            for a, s in ((agent_id, str(step)), (agent_id, WILDCARD), (WILDCARD, str(step)), (WILDCARD, WILDCARD)):
                hit = self._table.get((a, s, tid))
                if hit is not None:
                    return hit
        return None

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
        hit = self.lookup(request.agent_id, request.step, request.template_id)
        if hit is not None:
            return hit
        if self._responder is not None:
            return self._responder(request)
        raise ScriptMiss((request.agent_id, request.step, request.template_id))

    def calls_for(self, agent_id: str) -> list[ChatRequest]:
        return [c for c in self.calls if c.agent_id == agent_id]


def write_script(entries: Iterable[ScriptEntry], path: str | Path) -> None:
    lines = [json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) for e in entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_backend(config: BackendConfig, base_dir: str | Path | None = None) -> ChatBackend:
    if config.kind == "http":
        return HttpBackend(config)
    if config.script is None:
        raise ConfigError("mock backend needs a script file")
    path = Path(config.script)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.exists():
        raise ConfigError(f"mock script {path} does not exist")
    return MockBackend.from_file(path)
