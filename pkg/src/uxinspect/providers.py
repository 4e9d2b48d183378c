"""Chat and embedding model access with retry and a content-addressed record/replay cache."""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import logging
import math
import os
import random
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Literal, Protocol, Sequence

from .core import VideoRef
from .errors import (
    AttachmentUnreadable,
    CacheMiss,
    CredentialMissing,
    DimensionMismatch,
    ProviderError,
    TransportError,
)
from .media import file_digest

log = logging.getLogger(__name__)

RETRYABLE_STATUSES = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class Mode(str, enum.Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    model_id: str
    attachments: tuple[VideoRef, ...] = ()
    temperature: float = 0.0
    response_format: Literal["json", "free_text"] = "json"
    # purpose label for call accounting; not part of the cache key
    tag: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")


@dataclass(frozen=True)
class EmbedRequest:
    texts: tuple[str, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.texts:
            raise ValueError("at least one text is required")
        if any(not t.strip() for t in self.texts):
            raise ValueError("texts must be non-empty")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict[str, int] | None = None


@dataclass(frozen=True)
class EmbeddingVector:
    components: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("embedding must have at least one component")
        if not all(math.isfinite(c) for c in self.components):
            raise ValueError("embedding components must be finite")

    @property
    def dimension(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    base_backoff_ms: int = 500
    jitter: bool = True

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("retry.max_attempts must be >= 1")
        if self.base_backoff_ms < 0:
            raise ValueError("retry.base_backoff_ms must be >= 0")

    def delay(self, retry_index: int, rng: random.Random | None = None) -> float:
        """Seconds to wait before retry number ``retry_index`` (0-based).

        Jitter adds up to one extra step of the same size, so consecutive delays
        never shrink.
        """
        step = self.base_backoff_ms / 1000.0 * (2**retry_index)
        if self.jitter:
            step += (rng or random).uniform(0, step)
        return step


@dataclass(frozen=True)
class ProviderConfig:
    chat_endpoint: str = "https://generativelanguage.googleapis.com/v1beta"
    chat_model_id: str = "gemini-2.0-flash-001"
    embed_endpoint: str = "https://generativelanguage.googleapis.com/v1beta"
    embed_model_id: str = "text-embedding-004"
    api_key_env: str = "GEMINI_API_KEY"
    timeout_seconds: int = 300
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    chat_protocol: Literal["gemini", "openai"] = "gemini"
    embed_protocol: Literal["gemini", "openai"] = "gemini"


# --- cache keys --------------------------------------------------------------


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _attachment_digest(video: VideoRef) -> str:
    try:
        return file_digest(video.path)
    except OSError as exc:
        raise AttachmentUnreadable(f"cannot read attachment {video.path}: {exc}") from exc


def request_payload(request: ChatRequest | EmbedRequest) -> dict[str, Any]:
    """Canonical, path-independent description of a request (the cache key preimage)."""
    if isinstance(request, ChatRequest):
        return {
            "kind": "chat",
            "model_id": request.model_id,
            "system_prompt": request.system_prompt,
            "user_prompt": request.user_prompt,
            "temperature": float(request.temperature),
            "response_format": request.response_format,
            "attachments": [_attachment_digest(v) for v in request.attachments],
        }
    return {"kind": "embed", "model_id": request.model_id, "texts": list(request.texts)}


def request_digest(request: ChatRequest | EmbedRequest | dict[str, Any]) -> str:
    payload = request if isinstance(request, dict) else request_payload(request)
    return hashlib.sha256(_canonical(payload)).hexdigest()


# --- on-disk cache -----------------------------------------------------------


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: bytes
    created_at: str


class ResponseCache:
    """One file per entry named by hex digest, plus a ``<digest>.json`` sidecar."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._write_lock = threading.Lock()

    def _paths(self, key: str) -> tuple[Path, Path]:
        return self.root / key, self.root / f"{key}.json"

    def get(self, key: str) -> CacheEntry | None:
        body_path, meta_path = self._paths(key)
        try:
            value = body_path.read_bytes()
        except FileNotFoundError:
            return None
        created_at = ""
        try:
            created_at = json.loads(meta_path.read_text(encoding="utf-8")).get("created_at", "")
        except (OSError, ValueError):
            log.warning("cache sidecar for %s is missing or unreadable", key[:12])
        return CacheEntry(key, value, created_at)

    def put(self, key: str, value: bytes, summary: dict[str, Any], created_at: str) -> CacheEntry:
        body_path, meta_path = self._paths(key)
        meta = json.dumps({"created_at": created_at, "request": summary}, indent=2, ensure_ascii=False)
        with self._write_lock:
            self.root.mkdir(parents=True, exist_ok=True)
            _atomic_write(body_path, value)
            _atomic_write(meta_path, (meta + "\n").encode("utf-8"))
        return CacheEntry(key, value, created_at)

    def __contains__(self, key: str) -> bool:
        return self._paths(key)[0].is_file()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _summarize(payload: dict[str, Any]) -> dict[str, Any]:
    summary = dict(payload)
    for name in ("system_prompt", "user_prompt"):
        if name in summary and len(summary[name]) > 200:
            summary[name] = summary[name][:200] + "..."
    return summary


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# --- transport ---------------------------------------------------------------


class Transport(Protocol):
    def post(self, url: str, payload: dict[str, Any], headers: dict[str, str], timeout: float) -> Any: ...


class HttpxTransport:
    def __init__(self) -> None:
        import httpx

        self._httpx = httpx
        self._client = httpx.Client()

    def post(self, url: str, payload: dict[str, Any], headers: dict[str, str], timeout: float) -> Any:
        httpx = self._httpx
        try:
            resp = self._client.post(url, json=payload, headers=headers, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout calling {url}", retryable=True) from exc
        except httpx.TransportError as exc:
            raise TransportError(f"network error calling {url}: {exc}", retryable=True) from exc
        if resp.status_code >= 400:
            raise TransportError(
                f"HTTP {resp.status_code} from {url}: {resp.text[:300]}",
                status=resp.status_code,
                retryable=resp.status_code in RETRYABLE_STATUSES,
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response from {url}") from exc


def call_with_retry(
    fn: Callable[[], Any],
    policy: RetryPolicy,
    *,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> Any:
    """Run ``fn`` until it succeeds, a non-retryable error occurs, or attempts run out."""
    for attempt in range(policy.max_attempts):
        try:
            return fn()
        except TransportError as exc:
            if not exc.retryable or attempt == policy.max_attempts - 1:
                if exc.retryable:
                    raise TransportError(
                        f"{exc} (gave up after {policy.max_attempts} attempts)", status=exc.status
                    ) from exc
                raise
            wait = policy.delay(attempt, rng)
            log.warning("transient provider error (%s); retrying in %.2fs", exc, wait)
            sleep(wait)
    raise AssertionError("unreachable")


# --- wire formats ------------------------------------------------------------


def _video_b64(video: VideoRef) -> str:
    try:
        return base64.b64encode(Path(video.path).read_bytes()).decode("ascii")
    except OSError as exc:
        raise AttachmentUnreadable(f"cannot read attachment {video.path}: {exc}") from exc


def _gemini_chat(cfg: ProviderConfig, req: ChatRequest) -> tuple[str, dict[str, Any]]:
    parts: list[dict[str, Any]] = [
        {"inline_data": {"mime_type": "video/mp4", "data": _video_b64(v)}} for v in req.attachments
    ]
    parts.append({"text": req.user_prompt})
    generation: dict[str, Any] = {"temperature": req.temperature}
    if req.response_format == "json":
        generation["responseMimeType"] = "application/json"
    payload = {
        "system_instruction": {"parts": [{"text": req.system_prompt}]},
        "contents": [{"role": "user", "parts": parts}],
        "generationConfig": generation,
    }
    return f"{cfg.chat_endpoint.rstrip('/')}/models/{req.model_id}:generateContent", payload


def _gemini_chat_response(body: Any) -> ChatResponse:
    try:
        parts = body["candidates"][0]["content"]["parts"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"unexpected chat response shape: {str(body)[:300]}") from exc
    text = "".join(p.get("text", "") for p in parts if isinstance(p, dict))
    meta = body.get("usageMetadata") or {}
    usage = None
    if meta:
        usage = {
            "input_tokens": int(meta.get("promptTokenCount", 0)),
            "output_tokens": int(meta.get("candidatesTokenCount", 0)),
        }
    return ChatResponse(text, usage)


def _openai_chat(cfg: ProviderConfig, req: ChatRequest) -> tuple[str, dict[str, Any]]:
    content: list[dict[str, Any]] = [
        {"type": "video_url", "video_url": {"url": f"data:video/mp4;base64,{_video_b64(v)}"}}
        for v in req.attachments
    ]
    content.append({"type": "text", "text": req.user_prompt})
    payload: dict[str, Any] = {
        "model": req.model_id,
        "temperature": req.temperature,
        "messages": [
            {"role": "system", "content": req.system_prompt},
            {"role": "user", "content": content},
        ],
    }
    if req.response_format == "json":
        payload["response_format"] = {"type": "json_object"}
    return f"{cfg.chat_endpoint.rstrip('/')}/chat/completions", payload


def _openai_chat_response(body: Any) -> ChatResponse:
    try:
        text = body["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"unexpected chat response shape: {str(body)[:300]}") from exc
    usage = None
    if body.get("usage"):
        usage = {
            "input_tokens": int(body["usage"].get("prompt_tokens", 0)),
            "output_tokens": int(body["usage"].get("completion_tokens", 0)),
        }
    return ChatResponse(text, usage)


def _gemini_embed(cfg: ProviderConfig, req: EmbedRequest) -> tuple[str, dict[str, Any]]:
    model = f"models/{req.model_id}"
    payload = {"requests": [{"model": model, "content": {"parts": [{"text": t}]}} for t in req.texts]}
    return f"{cfg.embed_endpoint.rstrip('/')}/{model}:batchEmbedContents", payload


def _gemini_embed_response(body: Any) -> list[list[float]]:
    try:
        return [list(e["values"]) for e in body["embeddings"]]
    except (KeyError, TypeError) as exc:
        raise ProviderError(f"unexpected embedding response shape: {str(body)[:300]}") from exc


def _openai_embed(cfg: ProviderConfig, req: EmbedRequest) -> tuple[str, dict[str, Any]]:
    return f"{cfg.embed_endpoint.rstrip('/')}/embeddings", {"model": req.model_id, "input": list(req.texts)}


def _openai_embed_response(body: Any) -> list[list[float]]:
    try:
        rows = sorted(body["data"], key=lambda d: d.get("index", 0))
        return [list(d["embedding"]) for d in rows]
    except (KeyError, TypeError) as exc:
        raise ProviderError(f"unexpected embedding response shape: {str(body)[:300]}") from exc


_CHAT_WIRE = {"gemini": (_gemini_chat, _gemini_chat_response), "openai": (_openai_chat, _openai_chat_response)}
_EMBED_WIRE = {"gemini": (_gemini_embed, _gemini_embed_response), "openai": (_openai_embed, _openai_embed_response)}


def _auth_headers(protocol: str, key: str) -> dict[str, str]:
    if protocol == "gemini":
        return {"x-goog-api-key": key}
    return {"Authorization": f"Bearer {key}"}


# --- client ------------------------------------------------------------------


class ModelClient:
    """Front door for chat and embedding calls in live, record or replay mode.

    ``calls`` counts logical requests by tag (``"embed"`` for embeddings);
    ``network_attempts`` counts transport invocations including retries.
    """

    def __init__(
        self,
        config: ProviderConfig,
        mode: Mode | str = Mode.REPLAY,
        cache: ResponseCache | str | Path | None = None,
        transport: Transport | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self.config = config
        self.mode = Mode(mode)
        if cache is not None and not isinstance(cache, ResponseCache):
            cache = ResponseCache(cache)
        if self.mode is not Mode.LIVE and cache is None:
            raise ValueError(f"{self.mode.value} mode needs a cache directory")
        self.cache = cache
        self._transport = transport
        self._sleep = sleep
        self._rng = rng
        self._lock = threading.Lock()
        self.calls: Counter[str] = Counter()
        self.network_attempts = 0
        self._latest_timestamp = ""

    @property
    def latest_timestamp(self) -> str:
        """Most recent created_at among responses served so far ('' if none)."""
        return self._latest_timestamp

    def _note(self, tag: str, created_at: str) -> None:
        with self._lock:
            self.calls[tag] += 1
            if created_at > self._latest_timestamp:
                self._latest_timestamp = created_at

    def _credential(self) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise CredentialMissing(self.config.api_key_env)
        return key

    def _transport_or_default(self) -> Transport:
        with self._lock:
            if self._transport is None:
                self._transport = HttpxTransport()
            return self._transport

    def _post(self, protocol: str, url: str, payload: dict[str, Any]) -> Any:
        headers = _auth_headers(protocol, self._credential())
        transport = self._transport_or_default()

        def attempt() -> Any:
            with self._lock:
                self.network_attempts += 1
            return transport.post(url, payload, headers, self.config.timeout_seconds)

        return call_with_retry(attempt, self.config.retry, sleep=self._sleep, rng=self._rng)

    def _lookup(self, key: str, kind: str) -> CacheEntry:
        assert self.cache is not None
        entry = self.cache.get(key)
        if entry is None:
            raise CacheMiss(key, kind)
        return entry

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = request_payload(request)
        key = request_digest(payload)
        if self.mode is Mode.REPLAY:
            entry = self._lookup(key, "chat")
            self._note(request.tag or "chat", entry.created_at)
            return ChatResponse(entry.value.decode("utf-8"))

        build, parse = _CHAT_WIRE[self.config.chat_protocol]
        url, body = build(self.config, request)
        response = parse(self._post(self.config.chat_protocol, url, body))
        created_at = utc_now()
        if self.mode is Mode.RECORD:
            assert self.cache is not None
            self.cache.put(key, response.text.encode("utf-8"), _summarize(payload), created_at)
        self._note(request.tag or "chat", created_at)
        return response

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        request = EmbedRequest(tuple(texts), self.config.embed_model_id)
        payload = request_payload(request)
        key = request_digest(payload)
        if self.mode is Mode.REPLAY:
            entry = self._lookup(key, "embed")
            rows = json.loads(entry.value)
            created_at = entry.created_at
        else:
            build, parse = _EMBED_WIRE[self.config.embed_protocol]
            url, body = build(self.config, request)
            rows = parse(self._post(self.config.embed_protocol, url, body))
            created_at = utc_now()

        if len(rows) != len(texts):
            raise ProviderError(f"embedding provider returned {len(rows)} vectors for {len(texts)} texts")
        vectors = [EmbeddingVector(tuple(float(c) for c in row)) for row in rows]
        if len({v.dimension for v in vectors}) > 1:
            raise DimensionMismatch("embedding provider returned vectors of differing dimension")

        if self.mode is Mode.RECORD:
            assert self.cache is not None
            value = json.dumps([list(v.components) for v in vectors], separators=(",", ":")).encode()
            self.cache.put(key, value, _summarize(payload), created_at)
        self._note("embed", created_at)
        return vectors
