"""Uniform access to chat, embedding, and rerank model capabilities.

Remote backends speak the OpenAI-compatible wire format (``/chat/completions``,
``/embeddings``; rerank uses ``{query, passages[]} -> {scores[]}``). Offline
backends are pure functions of (input, seed) so the whole system can run
deterministically with no network and no credentials.

API keys are read from the environment at call time and never persisted or
logged; every call is recorded in an append-only JSON-lines audit log carrying
digests only, never payloads or secrets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlparse

import requests

logger = logging.getLogger(__name__)

CHAT_ROLES = ("system", "user", "assistant")

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 4096
DEFAULT_CONTEXT_TOKEN_BUDGET = 128_000
# No tokenizer dependency: budgets are estimated as chars / divisor.
DEFAULT_CHARS_PER_TOKEN = 4
DEFAULT_OFFLINE_DIM = 256
DEFAULT_MAX_IN_FLIGHT = 4
HTTP_TIMEOUT_SECONDS = 60.0
RETRY_BACKOFF_SECONDS = 1.0


class GatewayError(Exception):
    """Base class for model-access failures."""


class TransportError(GatewayError):
    """HTTP-level failure (connection, DNS, timeout). Retried once."""


class BackendError(GatewayError):
    """Non-2xx response or malformed payload. Never retried."""


class EmptyInput(GatewayError):
    """Caller passed no texts / no passages / blank text."""


class ContextOverflow(GatewayError):
    """Estimated prompt tokens exceed the configured context budget."""


class ScriptMiss(GatewayError):
    """Scripted chat backend has no entry matching the prompt."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in CHAT_ROLES:
            raise ValueError(f"role must be one of {CHAT_ROLES}, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass
class ChatRequest:
    messages: list[ChatMessage]
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    model_id: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __init__(self, values: Iterable[float]) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in values))
        if not self.values:
            raise ValueError("embedding must have at least one dimension")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding values must be finite")

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class BackendProfile:
    """Where to reach the models and which ones to ask for.

    The credential is named indirectly: ``api_key_env_name`` is the name of an
    environment variable holding the key, so profiles are safe to serialize.
    """

    endpoint_url: str
    api_key_env_name: str = "HPCQA_API_KEY"
    chat_model: str = "meta/llama-3.1-405b-instruct"
    embed_model: str = "nvidia/llama-3.2-nv-embedqa-1b-v1"
    rerank_model: str = "nvidia/llama-3.2-nv-rerankqa-1b-v1"

    def __post_init__(self) -> None:
        parsed = urlparse(self.endpoint_url)
        if not (parsed.scheme and parsed.netloc):
            raise ValueError(f"endpoint_url is not a valid URL: {self.endpoint_url!r}")


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokenization shared by all offline scorers."""
    return text.lower().split()


def render_prompt(messages: Sequence[ChatMessage]) -> str:
    """Flatten a message list to the text offline backends match against."""
    return "\n\n".join(m.content for m in messages)


def sha256_digest(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Offline backends
# ---------------------------------------------------------------------------


class HashEmbeddingBackend:
    """Deterministic bag-of-tokens embedding.

    Each token is hashed with a seeded keyed blake2b into one of ``dim``
    buckets; the vector of bucket counts is L2-normalized. Stable across runs
    and platforms, and order-free: "a b" and "b a" embed identically.
    """

    def __init__(self, seed: int = 0, dim: int = DEFAULT_OFFLINE_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.seed = seed
        self.dim = dim
        self.model_id = f"offline/hash-embed-{dim}-seed{seed}"
        self._key = str(seed).encode("utf-8")

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out = []
        for text in texts:
            counts = [0.0] * self.dim
            for token in tokenize(text):
                counts[self._bucket(token)] += 1.0
            norm = math.sqrt(sum(c * c for c in counts))
            if norm > 0:
                counts = [c / norm for c in counts]
            else:
                # Text with no tokens still needs a valid unit vector.
                counts[0] = 1.0
            out.append(EmbeddingVector(counts))
        return out


class TokenOverlapReranker:
    """Scores a passage by the number of distinct query tokens it shares."""

    model_id = "offline/token-overlap"

    def rerank(self, query: str, passages: Sequence[str]) -> list[float]:
        query_tokens = set(tokenize(query))
        return [float(len(query_tokens & set(tokenize(p)))) for p in passages]


class ScriptedChatBackend:
    """Chat backend replaying a fixed script.

    ``script`` maps prompt matchers to replies. A matcher is a literal
    substring of the rendered prompt (or the whole prompt); the empty string
    matches everything. Entries are tried in declaration order and the first
    match wins. An unmatched prompt raises ScriptMiss rather than inventing a
    default, so test expectations stay explicit.
    """

    model_id = "offline/scripted-chat"

    def __init__(self, script: Mapping[str, str] | Sequence[tuple[str, str]]):
        if isinstance(script, Mapping):
            self.entries = list(script.items())
        else:
            self.entries = [(m, r) for m, r in script]
        self.calls: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> str:
        self.calls.append(request)
        prompt = render_prompt(request.messages)
        for matcher, reply in self.entries:
            if matcher == prompt or matcher in prompt:
                return reply
        raise ScriptMiss(
            f"no scripted reply for prompt (digest {sha256_digest(prompt)[:12]}, "
            f"{len(prompt)} chars)"
        )


def offline_embedding_backend(seed: int = 0, dim: int = DEFAULT_OFFLINE_DIM) -> HashEmbeddingBackend:
    return HashEmbeddingBackend(seed=seed, dim=dim)


def scripted_chat_backend(
    script: Mapping[str, str] | Sequence[tuple[str, str]],
) -> ScriptedChatBackend:
    return ScriptedChatBackend(script)


# ---------------------------------------------------------------------------
# HTTP backends (OpenAI-compatible wire format)
# ---------------------------------------------------------------------------


class _HttpBackend:
    def __init__(self, profile: BackendProfile):
        self.profile = profile

    def _api_key(self) -> str:
        return os.environ.get(self.profile.api_key_env_name, "")

    def _redact(self, text: str) -> str:
        key = self._api_key()
        return text.replace(key, "[redacted]") if key else text

    def _post(self, path: str, payload: dict) -> dict:
        url = self.profile.endpoint_url.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        key = self._api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_exc: Exception | None = None
        for attempt in range(2):
            try:
                response = requests.post(
                    url, json=payload, headers=headers, timeout=HTTP_TIMEOUT_SECONDS
                )
            except requests.RequestException as exc:
                last_exc = exc
                if attempt == 0:
                    logger.warning("transport error on %s, retrying once", url)
                    time.sleep(RETRY_BACKOFF_SECONDS)
                    continue
                raise TransportError(
                    f"POST {url} failed: {self._redact(str(exc))}"
                ) from exc
            if not 200 <= response.status_code < 300:
                body = self._redact(response.text[:500])
                raise BackendError(f"POST {url} -> HTTP {response.status_code}: {body}")
            try:
                return response.json()
            except ValueError as exc:
                raise BackendError(f"POST {url} returned non-JSON payload") from exc
        raise TransportError(f"POST {url} failed: {self._redact(str(last_exc))}")


class HttpChatBackend(_HttpBackend):
    @property
    def model_id(self) -> str:
        return self.profile.chat_model

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model_id or self.profile.chat_model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        data = self._post("/chat/completions", payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat payload: {exc!r}") from exc
        if not isinstance(content, str):
            raise BackendError("chat payload content is not a string")
        return content


class HttpEmbeddingBackend(_HttpBackend):
    @property
    def model_id(self) -> str:
        return self.profile.embed_model

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        payload = {"model": self.profile.embed_model, "input": list(texts)}
        data = self._post("/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda row: row["index"])
            vectors = [EmbeddingVector(row["embedding"]) for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embeddings payload: {exc!r}") from exc
        if len(vectors) != len(texts):
            raise BackendError(
                f"embedding count mismatch: sent {len(texts)}, got {len(vectors)}"
            )
        return vectors


class HttpRerankBackend(_HttpBackend):
    @property
    def model_id(self) -> str:
        return self.profile.rerank_model

    def rerank(self, query: str, passages: Sequence[str]) -> list[float]:
        payload = {
            "model": self.profile.rerank_model,
            "query": query,
            "passages": list(passages),
        }
        data = self._post("/rerank", payload)
        try:
            scores = [float(s) for s in data["scores"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed rerank payload: {exc!r}") from exc
        if len(scores) != len(passages):
            raise BackendError(
                f"rerank score count mismatch: sent {len(passages)}, got {len(scores)}"
            )
        return scores


# ---------------------------------------------------------------------------
# Gateway facade
# ---------------------------------------------------------------------------


@dataclass
class _AuditLog:
    path: Path
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")


class ModelGateway:
    """Single entry point for model calls: validation, budgets, audit.

    Backends are immutable after construction and safe to share; in-flight
    calls are capped by a bounded semaphore.
    """

    def __init__(
        self,
        chat=None,
        embedder=None,
        reranker=None,
        audit_path: str | Path | None = None,
        context_token_budget: int = DEFAULT_CONTEXT_TOKEN_BUDGET,
        chars_per_token: int = DEFAULT_CHARS_PER_TOKEN,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ):
        self.chat = chat
        self.embedder = embedder
        self.reranker = reranker
        self.context_token_budget = context_token_budget
        self.chars_per_token = chars_per_token
        self._audit = _AuditLog(Path(audit_path)) if audit_path else None
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

    def estimate_tokens(self, text: str) -> int:
        return len(text) // self.chars_per_token

    def _record(self, capability: str, model_id: str, raw_in: str, raw_out: str, t0: float) -> None:
        if self._audit is None:
            return
        self._audit.append(
            {
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "capability": capability,
                "model_id": model_id,
                "input_digest": sha256_digest(raw_in),
                "output_digest": sha256_digest(raw_out),
                "latency_ms": int((time.monotonic() - t0) * 1000),
            }
        )

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise EmptyInput("no texts to embed")
        if any(not t.strip() for t in texts):
            raise EmptyInput("texts must be non-empty after whitespace trim")
        if self.embedder is None:
            raise BackendError("no embedding backend configured")
        t0 = time.monotonic()
        with self._in_flight:
            vectors = self.embedder.embed(list(texts))
        if len(vectors) != len(texts):
            raise BackendError(
                f"backend returned {len(vectors)} vectors for {len(texts)} texts"
            )
        dims = {v.dim for v in vectors}
        if len(dims) != 1:
            raise BackendError(f"backend returned inconsistent dims: {sorted(dims)}")
        self._record(
            "embedding",
            self.embedder.model_id,
            json.dumps(list(texts)),
            json.dumps([v.dim for v in vectors]),
            t0,
        )
        return vectors

    def rerank_passages(self, query: str, passages: Sequence[str]) -> list[float]:
        if not passages:
            raise EmptyInput("no passages to rerank")
        if self.reranker is None:
            raise BackendError("no rerank backend configured")
        t0 = time.monotonic()
        with self._in_flight:
            scores = self.reranker.rerank(query, list(passages))
        if len(scores) != len(passages):
            raise BackendError(
                f"backend returned {len(scores)} scores for {len(passages)} passages"
            )
        if not all(math.isfinite(s) for s in scores):
            raise BackendError("rerank scores must be finite")
        self._record(
            "rerank",
            self.reranker.model_id,
            json.dumps([query, list(passages)]),
            json.dumps(scores),
            t0,
        )
        return scores

    def complete_chat(self, request: ChatRequest) -> str:
        if self.chat is None:
            raise BackendError("no chat backend configured")
        prompt = render_prompt(request.messages)
        estimated = self.estimate_tokens(prompt)
        if estimated > self.context_token_budget:
            raise ContextOverflow(
                f"estimated {estimated} tokens exceeds budget "
                f"{self.context_token_budget}"
            )
        t0 = time.monotonic()
        with self._in_flight:
            reply = self.chat.complete(request)
        self._record("chat", self.chat.model_id, prompt, reply, t0)
        return reply


def offline_gateway(
    seed: int = 0,
    script: Mapping[str, str] | Sequence[tuple[str, str]] | None = None,
    dim: int = DEFAULT_OFFLINE_DIM,
    **kwargs,
) -> ModelGateway:
    """Gateway wired entirely to deterministic offline backends."""
    return ModelGateway(
        chat=ScriptedChatBackend(script if script is not None else []),
        embedder=HashEmbeddingBackend(seed=seed, dim=dim),
        reranker=TokenOverlapReranker(),
        **kwargs,
    )


def http_gateway(profile: BackendProfile, **kwargs) -> ModelGateway:
    """Gateway speaking the OpenAI-compatible wire format at one endpoint."""
    return ModelGateway(
        chat=HttpChatBackend(profile),
        embedder=HttpEmbeddingBackend(profile),
        reranker=HttpRerankBackend(profile),
        **kwargs,
    )
