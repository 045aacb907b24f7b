"""External machine translation for the translate-and-test baseline.

Translations are cached on disk per ``(provider, text, source, target)``
using the same store as the chat gateway, because the same sentences are
translated once and then reused by every model.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from .cache import DiskCache, digest_of
from .errors import (
    AuthError,
    ConfigError,
    ProviderError,
    RateLimitError,
    TransportError,
    UnsupportedLanguageError,
    ValidationError,
)
from .gateway import RetryPolicy, ServerError, retry_call

_LANG_RE = re.compile(r"^[a-z]{2}(?:-[A-Za-z0-9]{1,8})*$")


@dataclass(frozen=True)
class TranslationResult:
    source_text: str
    translated_text: str
    source_lang: str
    target_lang: str
    provider: str
    from_cache: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TranslationResult":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class TranslationProvider(Protocol):
    name: str

    def translate(self, text: str, source_lang: str, target_lang: str) -> str: ...


def check_language_code(code: str) -> str:
    if not isinstance(code, str) or not _LANG_RE.match(code):
        raise ValidationError(f"malformed language code {code!r}; expected a two-letter primary tag such as 'mr'")
    return code


class MockTranslationProvider:
    """Looks translations up in a fixture map ``{source text: translation}``."""

    name = "mock"

    def __init__(self, table: Mapping[str, str], supported: frozenset[str] | None = None):
        self.table = dict(table)
        self.supported = supported
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockTranslationProvider":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load translation fixture {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"translation fixture {path} must be a JSON object")
        return cls(data)

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        with self._lock:
            self.calls += 1
        if self.supported is not None and not {source_lang, target_lang} <= self.supported:
            raise UnsupportedLanguageError(f"mock provider does not support {source_lang}->{target_lang}")
        try:
            return self.table[text]
        except KeyError:
            raise ProviderError(f"translation fixture has no entry for {text[:40]!r}", status=404) from None


class HTTPTranslationProvider:
    """Generic JSON translation endpoint.

    Sends ``{"q", "source", "target", "format": "text"}`` and accepts either
    ``{"translatedText": ...}`` or ``{"data": {"translations": [{"translatedText": ...}]}}``.
    """

    def __init__(
        self,
        endpoint_url: str,
        api_key_env: str | None = None,
        name: str = "http",
        timeout: float = 30.0,
        client: Any = None,
    ):
        if not endpoint_url:
            raise ConfigError("endpoint_url is required for the HTTP translation provider")
        self.endpoint_url = endpoint_url
        self.name = name
        self.api_key = os.environ.get(api_key_env, "").strip() if api_key_env else ""
        if api_key_env and not self.api_key:
            raise ConfigError(f"environment variable {api_key_env} is not set")
        if client is None:
            import httpx

            client = httpx.Client(timeout=timeout)
        self.client = client

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        import httpx

        body = {"q": text, "source": source_lang, "target": target_lang, "format": "text"}
        params = {"key": self.api_key} if self.api_key else None
        try:
            resp = self.client.post(self.endpoint_url, json=body, params=params)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        return parse_translation_body(resp.status_code, resp.text)


def parse_translation_body(status: int, body: str) -> str:
    if status in (401, 403):
        raise AuthError(f"authentication failed (HTTP {status})", status=status, body=body)
    if status == 429:
        raise RateLimitError("rate limited (HTTP 429)", status=status, body=body)
    if status >= 500:
        raise ServerError(f"server error (HTTP {status})", status=status, body=body)
    if status >= 400:
        if "language" in body.lower() and ("support" in body.lower() or "invalid" in body.lower()):
            raise UnsupportedLanguageError(f"language pair rejected (HTTP {status})", status=status, body=body)
        raise ProviderError(f"request rejected (HTTP {status})", status=status, body=body)
    try:
        data = json.loads(body)
        if "translatedText" in data:
            return data["translatedText"]
        return data["data"]["translations"][0]["translatedText"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"malformed translation body: {exc}", status=status, body=body) from exc


class Translator:
    def __init__(
        self,
        provider: TranslationProvider,
        cache_dir: str | Path | None = None,
        policy: RetryPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.cache = DiskCache(cache_dir, "translate")
        self.policy = policy or RetryPolicy()
        self.sleep = sleep
        self.network_calls = 0
        self._count_lock = threading.Lock()

    def key(self, text: str, source_lang: str, target_lang: str) -> str:
        return digest_of({"provider": self.provider.name, "text": text, "source": source_lang, "target": target_lang})

    def translate(self, text: str, source_lang: str = "mr", target_lang: str = "en") -> TranslationResult:
        if not text or not text.strip():
            raise ValidationError("text to translate must be non-empty")
        check_language_code(source_lang)
        check_language_code(target_lang)
        key = self.key(text, source_lang, target_lang)
        with self.cache.lock_for(key):
            stored = self.cache.get(key)
            if stored is not None:
                return TranslationResult.from_dict({**stored, "from_cache": True})

            def attempt() -> str:
                with self._count_lock:
                    self.network_calls += 1
                return self.provider.translate(text, source_lang, target_lang)

            translated, _ = retry_call(attempt, self.policy, self.sleep, f"translation {key[:12]}")
            if not translated or not translated.strip():
                raise ProviderError("provider returned an empty translation")
            result = TranslationResult(text, translated, source_lang, target_lang, self.provider.name)
            payload = result.to_dict()
            del payload["from_cache"]
            self.cache.put(key, payload)
            return result
