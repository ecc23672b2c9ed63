from __future__ import annotations

import logging

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deskagent.llm import (
    CompletionRequest,
    CompletionResponse,
    HTTPBackend,
    LLMClient,
    StubBackend,
    StubMismatchError,
    StubRule,
    StubScript,
    TransportError,
    count_tokens,
    fork_backend,
    make_backend,
)


@pytest.mark.parametrize("text,n", [
    ("pour red paint into wood cup", 6),
    ("", 0),
    ("FOCUS(red box)", 5),
    ("Score: 25.", 4),
    ("  many   spaces  ", 2),
])
def test_count_tokens(text, n):
    assert count_tokens(text) == n


@given(st.text(), st.text())
def test_count_tokens_is_additive_over_whitespace(a, b):
    assert count_tokens(a + " " + b) == count_tokens(a) + count_tokens(b)


def test_response_rejects_negative_counts():
    with pytest.raises(ValueError):
        CompletionResponse("x", -1, 0)
    assert CompletionResponse("x", 3, 4).total_tokens == 7


def test_stub_first_match_wins_and_call_index():
    script = StubScript((
        StubRule("second", ("plan",), call_index=1),
        StubRule("general", ("plan",)),
        StubRule("fallback", ()),
    ))
    b = StubBackend(script)
    req = CompletionRequest("please plan")
    assert [b.complete(req).text for _ in range(3)] == ["general", "second", "general"]
    assert b.complete(CompletionRequest("other")).text == "fallback"
    assert b.fork().complete(req).text == "general"


def test_stub_mismatch_reports_prompt_prefix():
    b = StubBackend(StubScript((StubRule("x", ("needle",)),)))
    with pytest.raises(StubMismatchError, match="haystack"):
        b.complete(CompletionRequest("haystack only"))


def test_stub_token_counts_are_deterministic():
    b = StubBackend(StubScript((StubRule("go to kitchen", ()),)))
    r = b.complete(CompletionRequest("where now ?"))
    assert (r.prompt_tokens, r.completion_tokens) == (3, 3)


def test_stub_script_yaml_round_trip(tmp_path):
    script = StubScript((StubRule("A", ("p", "q"), 2), StubRule("B→", ())))
    script.dump(tmp_path / "s.yaml")
    assert StubScript.load(tmp_path / "s.yaml") == script
    assert StubScript.from_data([{"contains": "p", "completion": "A"}]).rules[0].contains == ("p",)
    with pytest.raises(ValueError):
        StubScript.from_data([{"contains": "p"}])


def test_client_records_calls():
    client = LLMClient(StubBackend(StubScript((StubRule("ok", ()),))))
    client.complete("a b", "planning")
    client.complete("c", "grounding")
    assert [c.stage for c in client.calls] == ["planning", "grounding"]
    assert client.total_tokens == (2 + 1) + (1 + 1)
    assert client.log[0] == ("planning", "a b", "ok")


def test_make_backend(tmp_path):
    StubScript((StubRule("hi", ()),)).dump(tmp_path / "s.yaml")
    b = make_backend({"kind": "stub", "script": str(tmp_path / "s.yaml")})
    assert b.complete(CompletionRequest("x")).text == "hi"
    assert isinstance(fork_backend(b), StubBackend) and fork_backend(b) is not b
    with pytest.raises(ValueError):
        make_backend({"kind": "stub"})
    with pytest.raises(ValueError):
        make_backend({"kind": "carrier-pigeon"})
    assert isinstance(make_backend({"kind": "http", "base_url": "http://x", "model": "m"}), HTTPBackend)


def _ok(text="hello", usage=None):
    body = {"choices": [{"message": {"content": text}}]}
    if usage:
        body["usage"] = usage
    return httpx.Response(200, json=body)


def _backend(responses, **kw):
    seen = []
    it = iter(responses)

    def handler(request):
        seen.append(request)
        r = next(it)
        if isinstance(r, Exception):
            raise r
        return r

    sleeps = []
    b = HTTPBackend("http://llm.test/v1", "m", transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return b, seen, sleeps


def test_http_retries_then_succeeds():
    b, seen, sleeps = _backend([httpx.Response(429), httpx.Response(429), _ok()], backoff=0.5)
    r = b.complete(CompletionRequest("say hi"))
    assert r.text == "hello" and b.retries == 2 and len(seen) == 3
    assert sleeps == [0.5, 1.0]
    assert str(seen[0].url) == "http://llm.test/v1/chat/completions"


def test_http_prefers_reported_usage():
    b, _, _ = _backend([_ok("x y", {"prompt_tokens": 11, "completion_tokens": 7})])
    r = b.complete(CompletionRequest("p"))
    assert (r.prompt_tokens, r.completion_tokens) == (11, 7)
    b, _, _ = _backend([_ok("x y")])
    r = b.complete(CompletionRequest("p q r"))
    assert (r.prompt_tokens, r.completion_tokens) == (3, 2)


def test_http_non_retryable_error_fails_fast():
    b, seen, _ = _backend([httpx.Response(400, text="bad request")])
    with pytest.raises(TransportError, match="400"):
        b.complete(CompletionRequest("p"))
    assert len(seen) == 1


def test_http_gives_up_after_max_retries():
    b, seen, _ = _backend([httpx.Response(503)] * 3 + [httpx.ConnectError("down")], max_retries=3)
    with pytest.raises(TransportError, match="gave up after 4"):
        b.complete(CompletionRequest("p"))
    assert len(seen) == 4


def test_http_malformed_body():
    b, _, _ = _backend([httpx.Response(200, json={"nope": 1})])
    with pytest.raises(TransportError, match="malformed"):
        b.complete(CompletionRequest("p"))


def test_http_key_is_sent_and_redacted(monkeypatch, caplog):
    monkeypatch.setenv("DESKAGENT_API_KEY", "sk-secret-123")
    b, seen, _ = _backend([httpx.ConnectError("refused by sk-secret-123"), httpx.Response(401, text="key sk-secret-123 invalid")])
    with caplog.at_level(logging.WARNING), pytest.raises(TransportError) as info:
        b.complete(CompletionRequest("p"))
    assert seen[0].headers["Authorization"] == "Bearer sk-secret-123"
    assert "sk-secret-123" not in str(info.value)
    assert "sk-secret-123" not in caplog.text
