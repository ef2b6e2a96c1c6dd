"""OpenAI-compatible chat/embedding transport with record/replay cassettes.

This is the only module that talks to the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .errors import CassetteMiss, TransportError

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openai.com/v1"
API_KEY_ENV = "OPENAI_API_KEY"
CASSETTE_MODES = ("record", "replay", "passthrough")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((str(r), str(c)) for r, c in self.messages))

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChatRequest":
        return cls(obj["model"], tuple((m["role"], m["content"]) for m in obj["messages"]), float(obj["temperature"]))


def request_hash(request: ChatRequest) -> str:
    """sha256 over canonical JSON (sorted keys, fixed separators)."""
    payload = json.dumps(request.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ChatClient(Protocol):
    model: str

    def chat(self, request: ChatRequest) -> str: ...


@dataclass
class Usage:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


class _Retryable(Exception):
    pass


def _post_with_retries(
    http: httpx.Client,
    url: str,
    body: dict,
    headers: dict,
    attempts: int,
    backoff: float,
    sleep: Callable[[float], None],
) -> dict:
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            resp = http.post(url, json=body, headers=headers)
            if resp.status_code == 429 or resp.status_code >= 500:
                raise _Retryable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code >= 400:
                raise TransportError(f"POST {url}: HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        except (httpx.HTTPError, _Retryable, ValueError) as exc:
            last = exc
            if attempt + 1 < attempts:
                delay = backoff * 2**attempt
                log.warning("POST %s failed (%s); retrying in %.1fs", url, exc, delay)
                sleep(delay)
    raise TransportError(f"POST {url} failed after {attempts} attempts: {last}")


class OpenAIChatClient:
    """Chat completions over HTTP with exponential-backoff retries."""

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        api_key: str | None = None,
        attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        http: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.model = model
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL") or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.attempts = attempts
        self.backoff = backoff
        self.http = http or httpx.Client(timeout=timeout)
        self.sleep = sleep
        self.usage = Usage()
        self._lock = threading.Lock()

    def _headers(self) -> dict:
        if not self.api_key:
            raise TransportError(f"no API key; set {API_KEY_ENV}")
        return {"Authorization": f"Bearer {self.api_key}"}

    def chat(self, request: ChatRequest) -> str:
        data = _post_with_retries(
            self.http,
            f"{self.base_url}/chat/completions",
            request.to_json(),
            self._headers(),
            self.attempts,
            self.backoff,
            self.sleep,
        )
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response: {exc}") from exc
        usage = data.get("usage") or {}
        with self._lock:
            self.usage.calls += 1
            self.usage.prompt_tokens += int(usage.get("prompt_tokens", 0))
            self.usage.completion_tokens += int(usage.get("completion_tokens", 0))
        log.debug(
            "chat %s: %s prompt / %s completion tokens",
            self.model,
            usage.get("prompt_tokens"),
            usage.get("completion_tokens"),
        )
        return content or ""


class OpenAIEmbeddings:
    """Embedding provider for POST /embeddings."""

    def __init__(
        self,
        model: str = "text-embedding-ada-002",
        base_url: str | None = None,
        api_key: str | None = None,
        attempts: int = 3,
        backoff: float = 1.0,
        http: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.model = model
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL") or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.attempts = attempts
        self.backoff = backoff
        self.http = http or httpx.Client(timeout=60.0)
        self.sleep = sleep
        self.usage = Usage()

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        if not self.api_key:
            raise TransportError(f"no API key; set {API_KEY_ENV}")
        data = _post_with_retries(
            self.http,
            f"{self.base_url}/embeddings",
            {"model": self.model, "input": list(texts)},
            {"Authorization": f"Bearer {self.api_key}"},
            self.attempts,
            self.backoff,
            self.sleep,
        )
        rows = sorted(data["data"], key=lambda d: d["index"])
        self.usage.calls += 1
        self.usage.prompt_tokens += int((data.get("usage") or {}).get("prompt_tokens", 0))
        return [row["embedding"] for row in rows]


class Cassette:
    """JSONL store of {hash, request, response} lines."""

    def __init__(self, path: str | Path | None = None, mode: str = "record"):
        if mode not in CASSETTE_MODES:
            raise ValueError(f"cassette mode must be one of {CASSETTE_MODES}")
        self.path = Path(path) if path else None
        self.mode = mode
        self.entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        self.entries[obj["hash"]] = obj["response"]
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise ValueError(f"{self.path}:{lineno}: malformed cassette line ({exc})") from exc
        elif mode == "replay" and self.path is not None:
            raise FileNotFoundError(f"cassette {self.path} does not exist")

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, key: str) -> Optional[str]:
        return self.entries.get(key)

    def put(self, key: str, request: ChatRequest, response: str) -> None:
        with self._lock:
            if key in self.entries:
                return
            self.entries[key] = response
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    line = {"hash": key, "request": request.to_json(), "response": response}
                    fh.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")


class CassetteChatClient:
    """Serves chat requests from a cassette, falling through to ``inner``.

    replay: misses raise :class:`CassetteMiss`; ``inner`` is never called.
    record: misses call ``inner`` and are stored.
    passthrough: always calls ``inner``; nothing is stored.

    ``model`` must be given when there is no inner client, since it is part
    of every request hash.
    """

    def __init__(self, cassette: Cassette, inner: Optional[ChatClient] = None, model: str | None = None):
        if model is None and inner is None:
            raise ValueError("model id required when no inner client is given")
        self.cassette = cassette
        self.inner = inner
        self.model = model if model is not None else inner.model
        self.live_calls = 0

    def chat(self, request: ChatRequest) -> str:
        key = request_hash(request)
        mode = self.cassette.mode
        if mode != "passthrough":
            hit = self.cassette.get(key)
            if hit is not None:
                return hit
            if mode == "replay":
                raise CassetteMiss(key)
        if self.inner is None:
            raise TransportError("no live chat client configured")
        response = self.inner.chat(request)
        self.live_calls += 1
        if mode == "record":
            self.cassette.put(key, request, response)
        return response
