"""Chat/embedding backends: live HTTP, fixture replay, and recording."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from selfdocs.errors import BackendEmptyResponse, BackendError, ReplayMiss, TransientBackendError

API_BASE_ENV = "SDOC_API_BASE"
API_KEY_ENV = "SDOC_API_KEY"
DEFAULT_TIMEOUT = 120.0


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float
    max_tokens: int = 1024
    request_seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.messages[-1].role != "user":
            raise ValueError("last message of a chat request must come from the user")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def from_prompt(cls, prompt, model_id: str, temperature: float, max_tokens: int = 1024):
        msgs = tuple(Message(m["role"], m["content"]) for m in prompt.messages())
        return cls(model_id, msgs, float(temperature), max_tokens)


class Backend:
    """Interface every backend implements.

    ``digest`` arguments are the cache keys computed by the gateway; only the
    replay and recording backends use them.
    """

    name = "abstract"

    def complete(self, req: ChatRequest, digest: str) -> str:
        raise NotImplementedError

    def embed(self, texts: Sequence[str], model_id: str, digests: Sequence[str]) -> list[list[float]]:
        raise NotImplementedError

    def close(self) -> None:
        pass


def chat_body(req: ChatRequest) -> dict:
    body = {
        "model": req.model_id,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    if req.request_seed is not None:
        body["seed"] = req.request_seed
    return body


def encode_body(body: dict) -> bytes:
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


class LiveBackend(Backend):
    """OpenAI-compatible HTTP backend."""

    name = "live"

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        client: httpx.Client | None = None,
    ):
        base_url = base_url or os.environ.get(API_BASE_ENV)
        if not base_url:
            raise BackendError(f"no API base URL configured (set {API_BASE_ENV})")
        base_url = base_url.rstrip("/")
        if base_url.endswith("/v1"):
            base_url = base_url[: -len("/v1")]
        self.base_url = base_url
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, path: str, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.base_url + path, content=encode_body(body), headers=headers)
        except httpx.TimeoutException as e:
            raise TransientBackendError(f"timeout calling {path}: {e}") from e
        except httpx.TransportError as e:
            raise TransientBackendError(f"transport error calling {path}: {e}") from e
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code} from {path}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code} from {path}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as e:
            raise BackendError(f"non-JSON response from {path}") from e

    def complete(self, req: ChatRequest, digest: str) -> str:
        data = self._post("/v1/chat/completions", chat_body(req))
        try:
            message = data["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError("malformed chat completion response") from e
        if message.get("refusal"):
            raise BackendEmptyResponse(f"model refused: {message['refusal'][:200]}")
        content = message.get("content")
        if not content:
            raise BackendEmptyResponse("empty completion content")
        return content

    def embed(self, texts, model_id, digests):
        data = self._post("/v1/embeddings", {"model": model_id, "input": list(texts)})
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            vectors = [list(map(float, d["embedding"])) for d in items]
        except (KeyError, TypeError, ValueError) as e:
            raise BackendError("malformed embeddings response") from e
        if len(vectors) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors

    def close(self):
        self._client.close()


def read_trace(paths: Iterable[str | os.PathLike]) -> tuple[dict[str, str], dict[str, list[float]]]:
    completions: dict[str, str] = {}
    vectors: dict[str, list[float]] = {}
    for path in paths:
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "completion" in rec:
                    completions[rec["digest"]] = rec["completion"]
                elif "vector" in rec:
                    vectors[rec["digest"]] = rec["vector"]
                else:
                    raise ValueError(f"{path}:{line_no}: record has neither completion nor vector")
    return completions, vectors


class ReplayBackend(Backend):
    """Serves completions and vectors from JSONL fixtures keyed by digest.

    A digest without a fixture is a hard error so tests stay hermetic.
    """

    name = "replay"

    def __init__(self, fixtures: Iterable[str | os.PathLike]):
        self.completions, self.vectors = read_trace(fixtures)

    def complete(self, req, digest):
        try:
            return self.completions[digest]
        except KeyError:
            raise ReplayMiss(digest) from None

    def embed(self, texts, model_id, digests):
        out = []
        for d in digests:
            if d not in self.vectors:
                raise ReplayMiss(d)
            out.append(self.vectors[d])
        return out


class RecordingBackend(Backend):
    """Wraps another backend and appends every response to a replayable trace."""

    name = "record"

    def __init__(self, inner: Backend, trace_path: str | os.PathLike):
        self.inner = inner
        self.trace_path = Path(trace_path)
        self.trace_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _append(self, rec: dict) -> None:
        line = json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n"
        with self._lock, open(self.trace_path, "a", encoding="utf-8") as f:
            f.write(line)

    def complete(self, req, digest):
        text = self.inner.complete(req, digest)
        self._append({"digest": digest, "completion": text})
        return text

    def embed(self, texts, model_id, digests):
        vectors = self.inner.embed(texts, model_id, digests)
        for d, v in zip(digests, vectors):
            self._append({"digest": d, "vector": v})
        return vectors

    def close(self):
        self.inner.close()


class FunctionBackend(Backend):
    """In-process backend driven by plain callables; handy for tests and fixture authoring."""

    name = "function"

    def __init__(
        self,
        chat_fn: Callable[[ChatRequest], str] | None = None,
        embed_fn: Callable[[str], list[float]] | None = None,
    ):
        self.chat_fn = chat_fn
        self.embed_fn = embed_fn

    def complete(self, req, digest):
        if self.chat_fn is None:
            raise BackendError("no chat function configured")
        return self.chat_fn(req)

    def embed(self, texts, model_id, digests):
        if self.embed_fn is None:
            raise BackendError("no embedding function configured")
        return [self.embed_fn(t) for t in texts]
