"""Shot selection: embed (query, top-1 document) pairs, cluster them, sample exemplars."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from selfdocs.core import Document, Query, SflType, parse_sfl_code
from selfdocs.errors import BackendError, ClusterTooSmall, DegenerateInput, KTooLarge, PreconditionError

DEFAULT_EMBEDDING_MODEL = "bge-large-en-v1.5"
PAIR_JOINER = " "


def pair_text(query: Query, document: Document) -> str:
    return query.text + PAIR_JOINER + document.text


def embed_pair(query: Query, document: Document, gateway, model_id: str = DEFAULT_EMBEDDING_MODEL) -> np.ndarray:
    """Unit-norm embedding of the query text joined to its top-1 document."""
    try:
        return gateway.embed([pair_text(query, document)], model_id)[0]
    except BackendError as e:
        e.query_id = query.id
        raise


def embed_pairs(pairs: Sequence[tuple[Query, Document]], gateway, model_id: str = DEFAULT_EMBEDDING_MODEL):
    workers = max(1, getattr(gateway, "parallelism", 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: embed_pair(p[0], p[1], gateway, model_id), pairs))


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    centroids: np.ndarray
    membership: tuple[int, ...]
    seed: int
    iterations: int = 0
    sse_history: tuple[float, ...] = ()

    def members(self, cluster: int) -> list[int]:
        return [i for i, c in enumerate(self.membership) if c == cluster]

    def partition(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset(self.members(c)) for c in range(self.k))

    @property
    def sse(self) -> float:
        return self.sse_history[-1] if self.sse_history else 0.0


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances, computed directly for exactness on small pools
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _sse(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = [i for i in range(n) if i not in chosen]
            nxt = int(rest[rng.integers(len(rest))])
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def _repair_empty(x, labels, centroids, k):
    """Give each empty cluster the point farthest from its own centroid."""
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] > 0:
            continue
        own = np.einsum("nd,nd->n", x - centroids[labels], x - centroids[labels])
        movable = counts[labels] > 1
        own = np.where(movable, own, -np.inf)
        p = int(np.argmax(own))
        counts[labels[p]] -= 1
        labels[p] = c
        counts[c] = 1
        centroids[c] = x[p]
    return labels


def kmeans(
    points,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
    debug: bool = False,
) -> ClusterAssignment:
    """Lloyd's algorithm from a seeded k-means++ start.

    Ties in the assignment step go to the lowest cluster index.  ``debug``
    asserts that the within-cluster SSE never increases between iterations.
    """
    if k < 1:
        raise PreconditionError("k must be positive")
    try:
        x = np.asarray([np.asarray(p, dtype=np.float64) for p in points])
    except ValueError as e:
        raise DegenerateInput(f"points have inconsistent dimensions: {e}") from e
    if x.ndim != 2 or len(x) == 0 or x.shape[1] == 0:
        raise DegenerateInput("need a non-empty list of equal-length vectors")
    if not np.all(np.isfinite(x)):
        raise DegenerateInput("points contain non-finite values")
    n = len(x)
    if k > n:
        raise KTooLarge(k, n)

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iters + 1):
        labels = np.argmin(_sq_dists(x, centroids), axis=1)
        labels = _repair_empty(x, labels, centroids, k)
        new = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        history.append(_sse(x, labels, centroids))
        if debug and len(history) > 1:
            assert history[-1] <= history[-2] * (1 + 1e-12) + 1e-12, history
        if shift < tol:
            break
    return ClusterAssignment(
        k=k,
        centroids=centroids,
        membership=tuple(int(c) for c in labels),
        seed=seed,
        iterations=it,
        sse_history=tuple(history),
    )


@dataclass(frozen=True)
class Shot:
    query_id: str
    query: str
    document: str

    def to_dict(self) -> dict[str, str]:
        return {"query_id": self.query_id, "query": self.query, "document": self.document}


@dataclass(frozen=True)
class ShotPool:
    """k lists of m exemplars; list i feeds the i-th generated document."""

    shots: tuple[tuple[Shot, ...], ...]
    seed: int
    style: SflType | None = None

    def __post_init__(self):
        sizes = {len(s) for s in self.shots}
        if len(sizes) > 1:
            raise PreconditionError("every shot list must have the same length")

    @property
    def k(self) -> int:
        return len(self.shots)

    @property
    def m(self) -> int:
        return len(self.shots[0]) if self.shots else 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "m": self.m,
            "seed": self.seed,
            "style": self.style.code if self.style else None,
            "shots": [[s.to_dict() for s in lst] for lst in self.shots],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ShotPool":
        shots = tuple(tuple(Shot(**s) for s in lst) for lst in d["shots"])
        style = parse_sfl_code(d["style"]) if d.get("style") else None
        return cls(shots=shots, seed=d["seed"], style=style)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def sample_shots(
    assignment: ClusterAssignment,
    pairs: Sequence[tuple[Query, Document]],
    m: int,
    seed: int,
) -> ShotPool:
    """Draw m pairs per cluster uniformly without replacement (draw order kept)."""
    if m < 1:
        raise PreconditionError("m must be positive")
    if len(pairs) != len(assignment.membership):
        raise PreconditionError("pairs must align with the clustered points")
    rng = np.random.default_rng(seed)
    lists = []
    for c in range(assignment.k):
        members = assignment.members(c)
        if len(members) < m:
            raise ClusterTooSmall(c, len(members), m)
        picks = rng.choice(len(members), size=m, replace=False)
        lists.append(
            tuple(
                Shot(pairs[members[i]][0].id, pairs[members[i]][0].text, pairs[members[i]][1].text)
                for i in picks
            )
        )
    return ShotPool(shots=tuple(lists), seed=seed)
