"""Chat-completion clients: OpenAI-compatible HTTP, a content-addressed disk
cache wrapper, and a scripted deterministic mock.

Every client exposes ``complete(request) -> str``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx

from kbqa.errors import (
    AuthError,
    ContextLengthExceeded,
    ScriptMiss,
    ScriptParseError,
    TransportError,
)

log = logging.getLogger(__name__)

Message = dict[str, str]


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int | None = None
    request_id: str = ""

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not self.messages or not any(content.strip() for _, content in self.messages):
            raise ValueError("prompt must be non-empty")

    @classmethod
    def single(cls, prompt: str, model: str = "", temperature: float = 0.0, **kw) -> "CompletionRequest":
        return cls(model, (("user", prompt),), temperature, **kw)

    @classmethod
    def chat(cls, messages: Iterable[Message], model: str = "", temperature: float = 0.0, **kw) -> "CompletionRequest":
        return cls(model, tuple((m["role"], m["content"]) for m in messages), temperature, **kw)

    def message_dicts(self) -> list[Message]:
        return [{"role": r, "content": c} for r, c in self.messages]

    @property
    def text(self) -> str:
        """The conversation flattened into one string."""
        return "\n\n".join(c for _, c in self.messages)

    @property
    def iteration(self) -> int:
        """Number of assistant turns already in the conversation."""
        return sum(1 for r, _ in self.messages if r == "assistant")


class LLMClient(Protocol):
    def complete(self, req: CompletionRequest) -> str: ...


def cache_key(req: CompletionRequest) -> str:
    blob = json.dumps(
        {"model": req.model, "temperature": req.temperature, "messages": req.message_dicts()},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- HTTP --------------------------------------------------------------------


class OpenAIChatClient:
    """Client for ``POST {base_url}/chat/completions``.

    The API key is read from the environment variable named by ``api_key_env``.
    429 and 5xx responses (and transport errors) are retried with exponential
    backoff; 401/403 fail immediately with ``AuthError``; context-length
    rejections surface as ``ContextLengthExceeded``.
    """

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 5,
        backoff: float = 1.0,
        max_backoff: float = 30.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def payload(self, req: CompletionRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": req.model,
            "messages": req.message_dicts(),
            "temperature": req.temperature,
            "n": 1,
        }
        if req.max_tokens:
            body["max_tokens"] = req.max_tokens
        return body

    def _delay(self, attempt: int, resp: httpx.Response | None) -> float:
        if resp is not None:
            retry_after = resp.headers.get("retry-after")
            if retry_after:
                try:
                    return min(self.max_backoff, float(retry_after))
                except ValueError:
                    pass
        return min(self.max_backoff, self.backoff * (2 ** attempt))

    def complete(self, req: CompletionRequest) -> str:
        body = self.payload(req)
        last = ""
        for attempt in range(self.max_retries + 1):
            resp = None
            try:
                with self._slots:
                    resp = self._client.post(self.url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp, req)
                if resp.status_code in (401, 403):
                    raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code in (400, 413) and "context_length" in resp.text:
                    raise ContextLengthExceeded(resp.text[:200])
                if resp.status_code != 429 and resp.status_code < 500:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                last = f"HTTP {resp.status_code}"
            if attempt < self.max_retries:
                delay = self._delay(attempt, resp)
                log.warning("LLM request %s failed (%s); retrying in %.1fs", req.request_id, last, delay)
                self._sleep(delay)
        raise TransportError(f"giving up after {self.max_retries + 1} attempts: {last}")

    def _parse(self, resp: httpx.Response, req: CompletionRequest) -> str:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {resp.text[:200]}") from exc
        usage = data.get("usage") or {}
        log.info(
            "LLM call %s model=%s prompt_tokens=%s completion_tokens=%s",
            req.request_id, req.model, usage.get("prompt_tokens"), usage.get("completion_tokens"),
        )
        return text


# --- cache -------------------------------------------------------------------


class CachedClient:
    """Disk-backed response cache keyed by (model, temperature, messages).

    Entries live at ``<dir>/<key[:2]>/<key>.json`` and are written via a temp
    file plus rename so concurrent writers never expose partial files.
    """

    def __init__(self, inner: LLMClient, cache_dir: str | Path, enabled: bool = True):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    def complete(self, req: CompletionRequest) -> str:
        if not self.enabled:
            return self.inner.complete(req)
        key = cache_key(req)
        path = self._path(key)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
            with self._lock:
                self.hits += 1
            return entry["response"]
        text = self.inner.complete(req)
        with self._lock:
            self.misses += 1
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"key": key, "model": req.model, "temperature": req.temperature,
                 "messages": req.message_dicts(), "response": text}
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False, indent=1)
        os.replace(tmp, path)
        return text


# --- scripted mock -----------------------------------------------------------


@dataclass(frozen=True)
class ScriptRule:
    response: str
    ordinal: int | None = None
    contains: tuple[str, ...] = ()
    iteration: int | None = None

    def matches(self, req: CompletionRequest, call_number: int) -> bool:
        if self.ordinal is not None and self.ordinal != call_number:
            return False
        if self.iteration is not None and self.iteration != req.iteration:
            return False
        text = req.text
        return all(s in text for s in self.contains)


@dataclass
class ScriptedClient:
    """Deterministic mock driven by match rules; the first matching rule wins.

    A rule matches on the 1-based call ordinal, on substrings of the flattened
    conversation, and/or on the conversation's iteration (assistant turns so
    far). Unmatched requests raise ``ScriptMiss``; with ``miss_dir`` set, the
    offending prompt is written there too.
    """

    rules: list[ScriptRule]
    miss_dir: Path | None = None
    calls: int = 0
    log: list[tuple[CompletionRequest, str]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_queue(cls, responses: Iterable[str]) -> "ScriptedClient":
        return cls([ScriptRule(r, ordinal=i) for i, r in enumerate(responses, start=1)])

    def complete(self, req: CompletionRequest) -> str:
        with self._lock:
            self.calls += 1
            n = self.calls
        for rule in self.rules:
            if rule.matches(req, n):
                self.log.append((req, rule.response))
                return rule.response
        saved = None
        if self.miss_dir is not None:
            self.miss_dir.mkdir(parents=True, exist_ok=True)
            target = self.miss_dir / f"miss-{cache_key(req)[:16]}.txt"
            target.write_text(req.text, encoding="utf-8")
            saved = str(target)
        raise ScriptMiss(req.text, saved)


def mock_from_script(path: str | Path, miss_dir: str | Path | None = None) -> ScriptedClient:
    """Load a JSON script: ``{"rules": [{"response": ..., "ordinal"?: int,
    "contains"?: str | [str], "iteration"?: int}, ...]}`` (a bare list of rules
    is accepted too)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScriptParseError(f"{path}: {exc}") from exc
    items = data.get("rules") if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise ScriptParseError(f"{path}: expected a list of rules")
    rules = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or not isinstance(item.get("response"), str):
            raise ScriptParseError(f"{path}: rule {i} needs a string 'response'")
        unknown = set(item) - {"response", "ordinal", "contains", "iteration", "comment"}
        if unknown:
            raise ScriptParseError(f"{path}: rule {i} has unknown keys {sorted(unknown)}")
        contains = item.get("contains", ())
        if isinstance(contains, str):
            contains = (contains,)
        if not all(isinstance(c, str) for c in contains):
            raise ScriptParseError(f"{path}: rule {i} 'contains' must be strings")
        for key in ("ordinal", "iteration"):
            if key in item and not isinstance(item[key], int):
                raise ScriptParseError(f"{path}: rule {i} '{key}' must be an integer")
        rules.append(ScriptRule(item["response"], item.get("ordinal"), tuple(contains), item.get("iteration")))
    return ScriptedClient(rules, Path(miss_dir) if miss_dir else None)
