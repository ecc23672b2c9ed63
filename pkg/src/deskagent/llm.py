"""Prompt-completion transport: an HTTP backend and a scripted stub.

Both backends return :class:`CompletionResponse` with token counts. When
the backend reports exact usage it is used verbatim; otherwise the
deterministic :func:`count_tokens` approximation fills in.
"""
from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx
import yaml

log = logging.getLogger(__name__)

_TOKEN_RX = re.compile(r"\w+|[^\w\s]")


def count_tokens(text: str) -> int:
    """Words plus standalone punctuation marks."""
    return len(_TOKEN_RX.findall(text))


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    """The backend could not produce a completion after all retries."""


class StubMismatchError(LLMError):
    """A scripted stub received a prompt none of its rules match."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model: str = "stub"
    temperature: float = 0.0
    max_tokens: int = 512


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float = 0.0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


# -- HTTP -----------------------------------------------------------------------

RETRY_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})


class HTTPBackend:
    """OpenAI-style ``/chat/completions`` client with bounded backoff.

    The API key is read from ``api_key_env`` at request time, so it never
    lives in configuration files, and it is masked in every log line.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "DESKAGENT_API_KEY",
        max_retries: int = 4,
        backoff: float = 0.5,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        redact: bool = True,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self.redact = redact
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self.retries = 0

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _scrub(self, text: str) -> str:
        key = os.environ.get(self.api_key_env)
        if self.redact and key:
            text = text.replace(key, "[REDACTED]")
        return text

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": request.model if request.model != "stub" else self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff * 2 ** (attempt - 1)
                self.retries += 1
                log.warning("retry %d/%d after %s (sleep %.2fs)", attempt, self.max_retries, last, delay)
                self._sleep(delay)
            start = time.perf_counter()
            try:
                resp = self._client.post(url, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                last = self._scrub(f"transport error: {exc}")
                continue
            if resp.status_code in RETRY_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise TransportError(self._scrub(f"HTTP {resp.status_code}: {resp.text[:200]}"))
            body = resp.json()
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion body: {exc!r}") from None
            usage = body.get("usage") or {}
            latency = time.perf_counter() - start
            log.debug("completion from %s in %.3fs", url, latency)
            return CompletionResponse(
                text=text,
                prompt_tokens=int(usage.get("prompt_tokens", count_tokens(request.prompt))),
                completion_tokens=int(usage.get("completion_tokens", count_tokens(text))),
                latency=latency,
            )
        raise TransportError(f"gave up after {self.max_retries + 1} attempts: {last}")

    def close(self) -> None:
        self._client.close()


# -- scripted stub ---------------------------------------------------------------

@dataclass(frozen=True)
class StubRule:
    """Fires when every ``contains`` substring is in the prompt and, if set,
    the call is the ``call_index``-th of the episode (0-based)."""

    completion: str
    contains: tuple[str, ...] = ()
    call_index: int | None = None

    def matches(self, prompt: str, index: int) -> bool:
        if self.call_index is not None and self.call_index != index:
            return False
        return all(s in prompt for s in self.contains)


@dataclass(frozen=True)
class StubScript:
    rules: tuple[StubRule, ...]

    @classmethod
    def from_data(cls, data: Any) -> "StubScript":
        if isinstance(data, Mapping):
            data = data.get("rules", [])
        rules = []
        for i, r in enumerate(data or []):
            if "completion" not in r:
                raise ValueError(f"stub rule {i}: missing 'completion'")
            contains = r.get("contains", ())
            if isinstance(contains, str):
                contains = (contains,)
            idx = r.get("call_index")
            rules.append(StubRule(str(r["completion"]), tuple(contains), None if idx is None else int(idx)))
        return cls(tuple(rules))

    @classmethod
    def load(cls, path: str | Path) -> "StubScript":
        return cls.from_data(yaml.safe_load(Path(path).read_text(encoding="utf-8")))

    def to_data(self) -> dict[str, Any]:
        rows = []
        for r in self.rules:
            row: dict[str, Any] = {"contains": list(r.contains), "completion": r.completion}
            if r.call_index is not None:
                row["call_index"] = r.call_index
            rows.append(row)
        return {"rules": rows}

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_data(), sort_keys=False, allow_unicode=True), encoding="utf-8")

    def __add__(self, other: "StubScript") -> "StubScript":
        return StubScript(self.rules + other.rules)


class StubBackend:
    """Deterministic canned completions; first matching rule wins.

    The call counter used by ``call_index`` rules lives on the instance,
    so each episode should get its own via :meth:`fork`.
    """

    def __init__(self, script: StubScript, counter: Callable[[str], int] = count_tokens):
        self.script = script
        self.counter = counter
        self.calls = 0
        self._lock = threading.Lock()

    def fork(self) -> "StubBackend":
        return StubBackend(self.script, self.counter)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            index = self.calls
            self.calls += 1
        for rule in self.script.rules:
            if rule.matches(request.prompt, index):
                return CompletionResponse(
                    text=rule.completion,
                    prompt_tokens=self.counter(request.prompt),
                    completion_tokens=self.counter(rule.completion),
                )
        prefix = " ".join(request.prompt[:160].split())
        raise StubMismatchError(f"no stub rule matches call {index}: {prefix!r}")


# -- per-episode client with accounting ------------------------------------------

@dataclass(frozen=True)
class LLMCall:
    stage: str
    prompt_tokens: int
    completion_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass
class LLMClient:
    """Wraps a backend and records every call for cost accounting.

    ``log`` keeps (stage, prompt, completion) triples for audit.
    """

    backend: Backend
    model: str = "stub"
    temperature: float = 0.0
    max_tokens: int = 512
    calls: list[LLMCall] = field(default_factory=list)
    log: list[tuple[str, str, str]] = field(default_factory=list)

    def complete(self, prompt: str, stage: str) -> CompletionResponse:
        resp = self.backend.complete(
            CompletionRequest(prompt, self.model, self.temperature, self.max_tokens)
        )
        self.calls.append(LLMCall(stage, resp.prompt_tokens, resp.completion_tokens))
        self.log.append((stage, prompt, resp.text))
        return resp

    @property
    def total_tokens(self) -> int:
        return sum(c.total_tokens for c in self.calls)


def fork_backend(backend: Backend) -> Backend:
    """A per-episode copy for backends with episode-scoped state."""
    fork = getattr(backend, "fork", None)
    return fork() if callable(fork) else backend


def make_backend(spec: Mapping[str, Any] | None, stub: StubScript | None = None) -> Backend:
    """Build a backend from config: ``{"kind": "stub", "script": path}`` or
    ``{"kind": "http", "base_url": ..., "model": ...}``."""
    spec = dict(spec or {"kind": "stub"})
    kind = spec.pop("kind", "stub")
    if kind == "stub":
        script = stub
        if "script" in spec:
            loaded = StubScript.load(spec["script"])
            script = loaded if script is None else loaded + script
        if script is None:
            raise ValueError("stub backend needs a script")
        return StubBackend(script)
    if kind == "http":
        return HTTPBackend(**spec)
    raise ValueError(f"unknown backend kind {kind!r}")

