from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from selfdocs.errors import (
    BackendEmptyResponse,
    BackendError,
    BackendExhausted,
    PreconditionError,
    TransientBackendError,
)
from selfdocs.gateway.backends import Backend, ChatRequest
from selfdocs.gateway.cache import ResponseCache

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_BASE_DELAY = 1.0
DEFAULT_PARALLELISM = 8


def _canonical(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def chat_cache_key(req: ChatRequest, replicate_index: int = 0) -> str:
    """Digest of the fields that determine a completion.

    The replicate index is part of the key so that several samples of the
    same prompt at non-zero temperature are cached separately.
    """
    payload = [
        "chat",
        req.model_id,
        [[m.role, m.content] for m in req.messages],
        float(req.temperature),
        int(req.max_tokens),
        int(replicate_index),
    ]
    return hashlib.sha256(_canonical(payload)).hexdigest()


def embed_cache_key(model_id: str, text: str) -> str:
    return hashlib.sha256(_canonical(["embed", model_id, text])).hexdigest()


def _normalize(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise BackendError("embedding is empty or contains non-finite values")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise BackendError("embedding has zero norm")
    return v / norm


class Gateway:
    """Cached, retrying front end over a :class:`Backend`.

    Every dispatch to the backend is appended to ``calls`` (and to the
    optional JSONL ``call_log`` file) so callers can assert how much work
    actually reached the backend.
    """

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        *,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        base_delay: float = DEFAULT_BASE_DELAY,
        max_delay: float = 60.0,
        parallelism: int = DEFAULT_PARALLELISM,
        sleep: Callable[[float], None] = time.sleep,
        seed: int | None = None,
        call_log: str | Path | None = None,
    ):
        self.backend = backend
        self.cache = cache if cache is not None else ResponseCache()
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.parallelism = parallelism
        self.calls: list[tuple[str, str]] = []
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._call_log = Path(call_log) if call_log is not None else None
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    def _log_call(self, kind: str, digest: str) -> None:
        with self._lock:
            self.calls.append((kind, digest))
            if self._call_log is not None:
                with open(self._call_log, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"kind": kind, "digest": digest, "backend": self.backend.name}) + "\n")

    def _key_lock(self, digest: str) -> threading.Lock:
        with self._lock:
            return self._key_locks[digest]

    def _with_retry(self, fn, what: str):
        last = None
        for attempt in range(self.max_attempts):
            try:
                return fn()
            except TransientBackendError as e:
                last = e
                if attempt + 1 == self.max_attempts:
                    break
                delay = min(self.max_delay, self.base_delay * 2**attempt)
                delay *= 0.5 + self._rng.random()
                log.warning("%s failed (%s); retry %d in %.2fs", what, e, attempt + 1, delay)
                self._sleep(delay)
        raise BackendExhausted(f"{what} failed after {self.max_attempts} attempts: {last}") from last

    def chat(self, req: ChatRequest, replicate_index: int = 0) -> str:
        digest = chat_cache_key(req, replicate_index)
        hit = self.cache.get(digest)
        if hit is not None:
            return hit["completion"]
        with self._key_lock(digest):
            hit = self.cache.get(digest)
            if hit is not None:
                return hit["completion"]

            def call():
                self._log_call("chat", digest)
                return self.backend.complete(req, digest)

            text = self._with_retry(call, f"chat {digest[:12]}")
            if not text:
                raise BackendEmptyResponse("backend returned an empty completion")
            self.cache.put(digest, {"digest": digest, "completion": text})
            stored = self.cache.get(digest)
            return stored["completion"]

    def embed(self, texts: Sequence[str], model_id: str) -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            raise PreconditionError("embed needs at least one text")
        digests = [embed_cache_key(model_id, t) for t in texts]
        found: dict[str, list[float]] = {}
        missing: dict[str, str] = {}
        for d, t in zip(digests, texts):
            if d in found or d in missing:
                continue
            hit = self.cache.get(d)
            if hit is not None:
                found[d] = hit["vector"]
            else:
                missing[d] = t
        if missing:
            miss_digests = list(missing)
            miss_texts = [missing[d] for d in miss_digests]

            def call():
                for d in miss_digests:
                    self._log_call("embed", d)
                return self.backend.embed(miss_texts, model_id, miss_digests)

            vectors = self._with_retry(call, f"embed batch of {len(miss_texts)}")
            for d, v in zip(miss_digests, vectors):
                v = [float(x) for x in v]
                if not all(math.isfinite(x) for x in v):
                    raise BackendError("backend returned a non-finite embedding")
                self.cache.put(d, {"digest": d, "vector": v})
                found[d] = self.cache.get(d)["vector"]
        return [_normalize(found[d]) for d in digests]

    def close(self) -> None:
        self.backend.close()
