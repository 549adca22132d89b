import json

import httpx
import pytest

from sipsim.backend import (
    BackendConfig,
    ChatMessage,
    ChatRequest,
    HttpBackend,
    MockBackend,
    ScriptEntry,
    make_backend,
    write_script,
)
from sipsim.errors import BackendTimeout, ConfigError, HttpStatusError, MalformedResponse, ScriptMiss

URL = "http://llm.test/v1/chat/completions"


def req(**kw):
    base = dict(messages=(ChatMessage("user", "hi"),), agent_id="A1", step=0, template_id="SipAnalysis")
    base.update(kw)
    return ChatRequest(**base)


def ok_body(text="hello"):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def http_backend(handler, sleeps=None, **cfg):
    config = BackendConfig(kind="http", endpoint_url=URL, **cfg)
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpBackend(config, client=client, sleep=(sleeps.append if sleeps is not None else lambda s: None), api_key="sk-test")


def test_http_success_payload_and_auth():
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json=ok_body("fine"))

    out = http_backend(handler, model="m-1").complete(req(temperature=0.2, seed=9))
    assert out == "fine"
    body = json.loads(seen[0].content)
    assert body == {"model": "m-1", "messages": [{"role": "user", "content": "hi"}], "temperature": 0.2, "seed": 9}
    assert seen[0].headers["authorization"] == "Bearer sk-test"


def test_http_429_retries_with_backoff():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        return httpx.Response(429)

    with pytest.raises(HttpStatusError) as err:
        http_backend(handler, sleeps, max_retries=2, backoff_base=0.5).complete(req())
    assert len(calls) == 3
    assert sleeps == [0.5, 1.0]
    assert err.value.status_code == 429 and err.value.attempts == 3


def test_http_recovers_after_server_error():
    responses = iter([httpx.Response(503), httpx.Response(200, json=ok_body("late"))])
    assert http_backend(lambda r: next(responses)).complete(req()) == "late"


def test_http_non_retryable_status():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401)

    with pytest.raises(HttpStatusError):
        http_backend(handler).complete(req())
    assert len(calls) == 1


def test_http_timeout():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(BackendTimeout) as err:
        http_backend(handler, max_retries=1).complete(req())
    assert err.value.attempts == 2


@pytest.mark.parametrize("body", [{"choices": []}, {"nope": 1}, {"choices": [{"message": {"content": 5}}]}])
def test_http_malformed(body):
    with pytest.raises(MalformedResponse):
        http_backend(lambda r: httpx.Response(200, json=body)).complete(req())


def test_http_non_json():
    with pytest.raises(MalformedResponse):
        http_backend(lambda r: httpx.Response(200, text="<html>")).complete(req())


def test_api_key_from_env(monkeypatch):
    monkeypatch.setenv("MY_KEY", "sk-env")
    seen = []

    def handler(request):
        seen.append(request.headers.get("authorization"))
        return httpx.Response(200, json=ok_body())

    config = BackendConfig(kind="http", endpoint_url=URL, api_key_env="MY_KEY")
    HttpBackend(config, client=httpx.Client(transport=httpx.MockTransport(handler))).complete(req())
    assert seen == ["Bearer sk-env"]


def test_mock_exact_and_wildcards():
    mock = MockBackend([
        ScriptEntry("A1", 0, "SipAnalysis", "exact"),
        ScriptEntry("*", 0, "SipAnalysis", "any agent"),
        ScriptEntry("*", "*", "Questionnaire", "3"),
    ])
    assert mock.complete(req()) == "exact"
    assert mock.complete(req(agent_id="B")) == "any agent"
    assert mock.complete(req(template_id="Questionnaire:Q7", step=4)) == "3"
    with pytest.raises(ScriptMiss):
        mock.complete(req(step=1))
    assert len(mock.calls) == 4


def test_mock_responder_fallback():
    mock = MockBackend(responder=lambda r: f"{r.agent_id}@{r.step}")
    assert mock.complete(req(step=5)) == "A1@5"


def test_script_file_round_trip(tmp_path):
    entries = [ScriptEntry("A1", 0, "SipAnalysis", "line1\nline2"), ScriptEntry("*", "*", "ActionSelect", "x")]
    write_script(entries, tmp_path / "s.jsonl")
    mock = make_backend(BackendConfig(script="s.jsonl"), base_dir=tmp_path)
    assert mock.complete(req()) == "line1\nline2"


def test_bad_script_file(tmp_path):
    (tmp_path / "s.jsonl").write_text('{"agent_id": "A"}\n')
    with pytest.raises(ConfigError):
        MockBackend.from_file(tmp_path / "s.jsonl")


def test_config_validation():
    with pytest.raises(ConfigError):
        BackendConfig(kind="grpc")
    with pytest.raises(ConfigError):
        BackendConfig(kind="http")
    with pytest.raises(ConfigError):
        make_backend(BackendConfig())


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(())
    with pytest.raises(ValueError):
        req(temperature=-1)
    with pytest.raises(ValueError):
        ChatMessage("robot", "x")
