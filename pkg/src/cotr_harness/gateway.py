"""Chat-completion gateway: retries, bounded concurrency and a response cache.

Two backends ship with the harness. :class:`HTTPChatBackend` speaks the
common chat-completions wire format (``model``, ``messages``,
``temperature``, ``max_tokens``). :class:`MockChatBackend` replays scripted
responses from a fixture file, see ``docs/mock_fixtures.md``.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from .cache import DiskCache, digest_of
from .errors import (
    AuthError,
    ConfigError,
    ProviderError,
    RateLimitError,
    TransportError,
    ValidationError,
)
from .prompts import PromptSpec

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 1024


class FinishReason(str, Enum):
    COMPLETE = "complete"
    TRUNCATED = "truncated"
    REFUSED = "refused"
    ERROR = "error"


_TEXT_BEARING = (FinishReason.COMPLETE, FinishReason.TRUNCATED)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.model_id or not self.model_id.strip():
            raise ValidationError("model_id must be non-empty")
        if self.temperature < 0:
            raise ValidationError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValidationError(f"max_tokens must be positive, got {self.max_tokens}")

    @classmethod
    def from_prompt(
        cls,
        spec: PromptSpec,
        model_id: str,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> "ChatRequest":
        return cls(
            model_id=model_id,
            system_text=spec.system_text,
            user_text=spec.user_text,
            temperature=temperature,
            max_tokens=max_tokens,
            request_tag=spec.request_tag,
        )

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system_text:
            msgs.append({"role": "system", "content": self.system_text})
        msgs.append({"role": "user", "content": self.user_text})
        return msgs


@dataclass(frozen=True)
class ChatResponse:
    raw_text: str | None
    finish_reason: FinishReason
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0
    from_cache: bool = False
    # not persisted: how many backend attempts this call took (0 on a cache hit)
    attempts: int = field(default=1, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "finish_reason", FinishReason(self.finish_reason))
        has_text = self.raw_text is not None
        if has_text != (self.finish_reason in _TEXT_BEARING):
            raise ValidationError(f"raw_text presence does not match finish_reason {self.finish_reason.value}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["finish_reason"] = self.finish_reason.value
        del d["from_cache"], d["attempts"]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], from_cache: bool = False) -> "ChatResponse":
        return cls(
            raw_text=d.get("raw_text"),
            finish_reason=FinishReason(d["finish_reason"]),
            prompt_tokens=int(d.get("prompt_tokens", 0)),
            completion_tokens=int(d.get("completion_tokens", 0)),
            latency=float(d.get("latency", 0.0)),
            from_cache=from_cache,
            attempts=0 if from_cache else 1,
        )


@dataclass(frozen=True)
class CacheKey:
    digest: str

    def __str__(self) -> str:
        return self.digest


def cache_key(req: ChatRequest) -> CacheKey:
    """SHA-256 over the fields that determine the completion; the request tag is excluded."""
    payload = {
        "model_id": req.model_id,
        "system_text": req.system_text,
        "user_text": req.user_text,
        "temperature": repr(float(req.temperature)),
        "max_tokens": int(req.max_tokens),
    }
    return CacheKey(digest_of(payload))


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    multiplier: float = 2.0
    max_delay: float = 30.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")

    def delay(self, failures: int) -> float:
        """Back-off before the next attempt, after ``failures`` consecutive failures."""
        return min(self.max_delay, self.base_delay * self.multiplier ** (failures - 1))


def is_retryable(exc: BaseException) -> bool:
    return bool(getattr(exc, "retryable", False))


class ChatBackend(Protocol):
    def send(self, req: ChatRequest) -> ChatResponse: ...


# ---------------------------------------------------------------------------
# HTTP backend


class ServerError(ProviderError):
    retryable = True


_FINISH_MAP = {
    "stop": FinishReason.COMPLETE,
    "end_turn": FinishReason.COMPLETE,
    "length": FinishReason.TRUNCATED,
    "max_tokens": FinishReason.TRUNCATED,
    "content_filter": FinishReason.REFUSED,
    "refusal": FinishReason.REFUSED,
}


class HTTPChatBackend:
    def __init__(
        self,
        endpoint_url: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        client: Any = None,
    ):
        if not endpoint_url:
            raise ConfigError("endpoint_url is required for the HTTP backend")
        self.endpoint_url = endpoint_url
        self.api_key = os.environ.get(api_key_env, "").strip()
        if not self.api_key:
            raise ConfigError(f"environment variable {api_key_env} is not set; it must hold the API key")
        if client is None:
            import httpx

            client = httpx.Client(timeout=timeout)
        self.client = client

    def send(self, req: ChatRequest) -> ChatResponse:
        import httpx

        body = {
            "model": req.model_id,
            "messages": req.messages(),
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        start = time.monotonic()
        try:
            resp = self.client.post(self.endpoint_url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        latency = time.monotonic() - start
        try:
            return parse_chat_completion(resp.status_code, resp.text, latency)
        except RateLimitError as exc:
            exc.retry_after = _retry_after(resp.headers.get("retry-after"))
            raise


def _retry_after(value: str | None) -> float | None:
    """Seconds from a ``Retry-After`` header; HTTP-date values are ignored."""
    try:
        seconds = float(value) if value is not None else None
    except ValueError:
        return None
    return seconds if seconds is not None and seconds >= 0 else None


def parse_chat_completion(status: int, body: str, latency: float = 0.0) -> ChatResponse:
    """Turn an HTTP status and body from a chat-completions endpoint into a response or error."""
    if status in (401, 403):
        raise AuthError(f"authentication failed (HTTP {status})", status=status, body=body)
    if status == 429:
        raise RateLimitError("rate limited (HTTP 429)", status=status, body=body)
    if status >= 500:
        raise ServerError(f"server error (HTTP {status})", status=status, body=body)
    if status >= 400:
        raise ProviderError(f"request rejected (HTTP {status})", status=status, body=body)
    try:
        data = json.loads(body)
        choice = data["choices"][0]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed completion body: {exc}", status=status, body=body) from exc
    finish = _FINISH_MAP.get(choice.get("finish_reason") or "stop", FinishReason.COMPLETE)
    content = (choice.get("message") or {}).get("content")
    if finish is not FinishReason.REFUSED and content is None:
        finish = FinishReason.REFUSED
    usage = data.get("usage") or {}
    return ChatResponse(
        raw_text=content if finish in _TEXT_BEARING else None,
        finish_reason=finish,
        prompt_tokens=int(usage.get("prompt_tokens") or 0),
        completion_tokens=int(usage.get("completion_tokens") or 0),
        latency=round(latency, 6),
    )


# ---------------------------------------------------------------------------
# mock backend

_MOCK_ERRORS: dict[str, Callable[[str, int | None], Exception]] = {
    "transport": lambda msg, status: TransportError(msg),
    "rate_limit": lambda msg, status: RateLimitError(msg, status=status or 429),
    "auth": lambda msg, status: AuthError(msg, status=status or 401),
    "server": lambda msg, status: ServerError(msg, status=status or 500),
    "provider": lambda msg, status: ProviderError(msg, status=status or 400),
}


class MockChatBackend:
    """Replays scripted responses keyed by cache digest, ``model_id|request_tag`` or ``request_tag``.

    A fixture value is one step or a list of steps; the n-th call for a key
    plays step n and the last step repeats. A step is either
    ``{"text": ...}`` (plus optional ``finish_reason``, token counts and
    ``latency``) or ``{"error": kind}`` with kind one of transport,
    rate_limit, auth, server, provider.
    """

    def __init__(
        self,
        responses: Mapping[str, Any] | None = None,
        default: Mapping[str, Any] | None = None,
        responder: Callable[[ChatRequest], Any] | None = None,
        delay: float = 0.0,
    ):
        self.responses = dict(responses or {})
        self.default = default
        self.responder = responder
        self.delay = delay
        self.calls = 0
        self.calls_by_key: dict[str, int] = {}
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> "MockChatBackend":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load mock fixture {path}: {exc}") from exc
        return cls(responses=data.get("responses", {}), default=data.get("default"), **kwargs)

    def _lookup(self, req: ChatRequest) -> tuple[str, Any]:
        for key in (cache_key(req).digest, f"{req.model_id}|{req.request_tag}", req.request_tag):
            if key in self.responses:
                return key, self.responses[key]
        if self.responder is not None:
            return f"responder:{req.request_tag}", self.responder(req)
        if self.default is not None:
            return f"default:{req.request_tag}", self.default
        raise ProviderError(f"mock fixture has no response for {req.model_id}|{req.request_tag}", status=404)

    def send(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            key, script = self._lookup(req)
            with self._lock:
                n = self.calls_by_key.get(key, 0)
                self.calls_by_key[key] = n + 1
            steps = script if isinstance(script, list) else [script]
            step = steps[min(n, len(steps) - 1)]
            if isinstance(step, str):
                step = {"text": step}
            return _play_step(step)
        finally:
            with self._lock:
                self.in_flight -= 1


def _play_step(step: Mapping[str, Any]) -> ChatResponse:
    if "error" in step:
        kind = step["error"]
        if kind not in _MOCK_ERRORS:
            raise ConfigError(f"unknown mock error kind {kind!r}")
        raise _MOCK_ERRORS[kind](step.get("message", f"mock {kind} error"), step.get("status"))
    finish = FinishReason(step.get("finish_reason", "complete"))
    return ChatResponse(
        raw_text=step.get("text") if finish in _TEXT_BEARING else None,
        finish_reason=finish,
        prompt_tokens=int(step.get("prompt_tokens", 0)),
        completion_tokens=int(step.get("completion_tokens", 0)),
        latency=float(step.get("latency", 0.0)),
    )


# ---------------------------------------------------------------------------
# gateway


class LLMGateway:
    """Thread-safe front door for completions.

    At most ``parallelism`` backend calls are in flight at once. Successful
    responses are cached by :func:`cache_key`; concurrent identical requests
    are collapsed onto one backend call.
    """

    def __init__(
        self,
        backend: ChatBackend,
        cache_dir: str | Path | None = None,
        parallelism: int = 4,
        policy: RetryPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if parallelism < 1:
            raise ValidationError("parallelism must be >= 1")
        self.backend = backend
        self.cache = DiskCache(cache_dir, "chat")
        self.parallelism = parallelism
        self.policy = policy or RetryPolicy()
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(parallelism)
        self._stats_lock = threading.Lock()
        self.network_calls = 0
        self.cache_hits = 0

    def cached(self, req: ChatRequest) -> ChatResponse | None:
        stored = self.cache.get(cache_key(req).digest)
        return None if stored is None else ChatResponse.from_dict(stored, from_cache=True)

    def complete(self, req: ChatRequest, policy: RetryPolicy | None = None) -> ChatResponse:
        policy = policy or self.policy
        key = cache_key(req).digest
        hit = self.cached(req)
        if hit is None:
            with self.cache.lock_for(key):
                hit = self.cached(req)
                if hit is None:
                    resp = self._call_with_retries(req, policy)
                    self.cache.put(key, resp.to_dict())
                    return resp
        with self._stats_lock:
            self.cache_hits += 1
        return hit

    def _call_with_retries(self, req: ChatRequest, policy: RetryPolicy) -> ChatResponse:
        def attempt() -> ChatResponse:
            with self._slots:
                with self._stats_lock:
                    self.network_calls += 1
                return self.backend.send(req)

        resp, attempts = retry_call(attempt, policy, self.sleep, req.request_tag)
        return replace(resp, from_cache=False, attempts=attempts)


def retry_call(
    fn: Callable[[], Any],
    policy: RetryPolicy,
    sleep: Callable[[float], None] = time.sleep,
    what: str = "request",
) -> tuple[Any, int]:
    """Run ``fn`` until it succeeds, retrying retryable errors with exponential back-off.

    Returns ``(result, attempts)``. Non-retryable errors, and the last error
    once ``policy.max_attempts`` is reached, propagate unchanged.
    """
    failures = 0
    while True:
        try:
            return fn(), failures + 1
        except (ProviderError, TransportError) as exc:
            failures += 1
            if not is_retryable(exc) or failures >= policy.max_attempts:
                log.warning("%s failed after %d attempt(s): %s", what, failures, exc)
                raise
            wait = policy.delay(failures)
            retry_after = getattr(exc, "retry_after", None)
            if retry_after:
                wait = max(wait, float(retry_after))
            log.info("retrying %s in %.2fs (attempt %d failed: %s)", what, wait, failures, exc)
            sleep(wait)
