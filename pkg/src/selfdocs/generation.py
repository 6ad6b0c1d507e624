"""Self-document generation: shot pools, style alignment, per-query generation, corpus runs."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Sequence
from urllib.parse import quote

from selfdocs.core import GENREAD, DocType, Document, Query, SflType, Source, Task, self_doc_id
from selfdocs.dataset_io import RunManifest
from selfdocs.embed_cluster import DEFAULT_EMBEDDING_MODEL, Shot, ShotPool, embed_pairs, kmeans, sample_shots
from selfdocs.errors import BackendError, PreconditionError, TooManyShots
from selfdocs.gateway import ChatRequest
from selfdocs.prompts import MAX_SHOTS, Prompt, render_generation, render_genread, render_style_transform, template_digest

log = logging.getLogger(__name__)

GENERATION_TEMPERATURE = 0.95
TRANSFORM_TEMPERATURE = 0.0
DEFAULT_MODEL = "Qwen2.5-32B-Instruct"
DEFAULT_TRANSFORM_MODEL = "gpt-4o"
DEFAULT_FAILURE_THRESHOLD = 0.05


class Mode(str, enum.Enum):
    GENREAD_FEW_SHOT = "genread"
    TYPED_ZERO_SHOT = "typed"


@dataclass(frozen=True)
class GenerationConfig:
    n_docs: int = 10
    temperature: float = GENERATION_TEMPERATURE
    style: SflType | None = None
    mode: Mode = Mode.GENREAD_FEW_SHOT
    k_clusters: int = 10
    m_shots: int = 5
    seed: int = 0
    model_id: str = DEFAULT_MODEL
    transform_model_id: str = DEFAULT_TRANSFORM_MODEL
    transform_temperature: float = TRANSFORM_TEMPERATURE
    embedding_model_id: str = DEFAULT_EMBEDDING_MODEL
    max_tokens: int = 1024

    def __post_init__(self):
        if self.n_docs < 1:
            raise PreconditionError("n_docs must be positive")
        if not 0.0 <= self.temperature <= 2.0:
            raise PreconditionError("temperature must lie in [0, 2]")
        if self.k_clusters < 1 or self.m_shots < 1:
            raise PreconditionError("k_clusters and m_shots must be positive")
        if self.m_shots > MAX_SHOTS:
            raise TooManyShots(f"m_shots={self.m_shots} exceeds the {MAX_SHOTS}-block template")
        if self.mode is Mode.GENREAD_FEW_SHOT and self.n_docs > self.k_clusters:
            raise PreconditionError("few-shot mode generates at most one document per cluster")
        if self.mode is Mode.TYPED_ZERO_SHOT and self.style is None:
            raise PreconditionError("zero-shot typed generation needs a style")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["style"] = self.style.code if self.style else None
        d["mode"] = self.mode.value
        return d


# --- document store -------------------------------------------------------

def _atomic_write(path: Path, text: str, *, exclusive: bool) -> bool:
    """Write via temp file. With ``exclusive`` an existing file wins and False is returned."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        if exclusive:
            try:
                os.link(tmp, path)
            except FileExistsError:
                return False
        else:
            os.replace(tmp, path)
            tmp = None
        return True
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


@dataclass(frozen=True)
class StoreRecord:
    document: Document
    model_id: str
    prompt_digest: str
    created_at: str

    def to_json(self) -> str:
        d = self.document
        rec = {
            "text": d.text,
            "doc_type": d.doc_type.code,
            "source": d.source.value,
            "origin_query_id": d.origin_query_id,
            "replicate_index": d.replicate_index,
            "model_id": self.model_id,
            "prompt_digest": self.prompt_digest,
            "created_at": self.created_at,
        }
        return json.dumps(rec, ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, raw: str, manifest_id: str) -> "StoreRecord":
        rec = json.loads(raw)
        doc_type = DocType.parse(rec["doc_type"])
        doc = Document(
            id=self_doc_id(rec["origin_query_id"], doc_type, rec["replicate_index"], manifest_id),
            text=rec["text"],
            doc_type=doc_type,
            source=Source(rec["source"]),
            origin_query_id=rec["origin_query_id"],
            replicate_index=rec["replicate_index"],
        )
        return cls(doc, rec["model_id"], rec["prompt_digest"], rec["created_at"])


StoreKey = tuple[str, str, int]


class DocStore:
    """Write-once map ``(query_id, type code, replicate) -> Document``.

    With a ``path`` every entry is persisted as its own JSON file as soon as
    it is added; reopening the directory restores the same entries.  Without
    one the store lives in memory.
    """

    MANIFEST = "manifest.json"
    FAILURES = "failures"

    def __init__(self, path: str | Path | None = None, manifest_id: str = ""):
        self.path = Path(path) if path is not None else None
        self.manifest_id = manifest_id
        self._records: dict[StoreKey, StoreRecord] = {}
        self._failures: dict[StoreKey, str] = {}
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            mf = self.path / self.MANIFEST
            if mf.exists() and not manifest_id:
                self.manifest_id = json.loads(mf.read_text(encoding="utf-8"))["manifest_id"]
            self._load()

    @classmethod
    def open(cls, root: str | Path, manifest_id: str) -> "DocStore":
        return cls(Path(root) / manifest_id, manifest_id)

    @staticmethod
    def _filename(key: StoreKey) -> str:
        qid, code, rep = key
        return f"{quote(qid, safe='')}.{code}.{rep}.json"

    def _load(self) -> None:
        for p in sorted(self.path.glob("*.json")):
            if p.name == self.MANIFEST:
                continue
            rec = StoreRecord.from_json(p.read_text(encoding="utf-8"), self.manifest_id)
            self._records[self._key(rec.document)] = rec
        fdir = self.path / self.FAILURES
        if fdir.is_dir():
            for p in sorted(fdir.glob("*.json")):
                f = json.loads(p.read_text(encoding="utf-8"))
                key = (f["query_id"], f["doc_type"], f["replicate_index"])
                if key not in self._records:
                    self._failures[key] = f["error"]

    @staticmethod
    def _key(doc: Document) -> StoreKey:
        return (doc.origin_query_id, doc.doc_type.code, doc.replicate_index)

    def get(self, query_id: str, doc_type: DocType, replicate_index: int) -> Document | None:
        rec = self._records.get((query_id, doc_type.code, replicate_index))
        return rec.document if rec else None

    def record(self, query_id: str, doc_type: DocType, replicate_index: int) -> StoreRecord | None:
        return self._records.get((query_id, doc_type.code, replicate_index))

    def put(self, doc: Document, model_id: str = "", prompt_digest: str = "") -> Document:
        """Add ``doc`` unless its key is taken; returns whichever document is stored."""
        if doc.source not in (Source.SELF_GENERATED, Source.STYLE_TRANSFORMED):
            raise PreconditionError("only generated or transformed documents belong in a DocStore")
        doc = replace(doc, id=self_doc_id(doc.origin_query_id, doc.doc_type, doc.replicate_index, self.manifest_id))
        key = self._key(doc)
        with self._lock:
            if key in self._records:
                return self._records[key].document
            rec = StoreRecord(doc, model_id, prompt_digest, datetime.now(timezone.utc).isoformat())
            if self.path is not None:
                target = self.path / self._filename(key)
                if not _atomic_write(target, rec.to_json(), exclusive=True):
                    rec = StoreRecord.from_json(target.read_text(encoding="utf-8"), self.manifest_id)
                fail = self.path / self.FAILURES / self._filename(key)
                if fail.exists():
                    fail.unlink()
            self._records[key] = rec
            self._failures.pop(key, None)
            return rec.document

    def record_failure(self, query_id: str, doc_type: DocType, replicate_index: int, error: str) -> None:
        key = (query_id, doc_type.code, replicate_index)
        with self._lock:
            if key in self._records:
                return
            self._failures[key] = error
            if self.path is not None:
                body = {"query_id": query_id, "doc_type": doc_type.code, "replicate_index": replicate_index, "error": error}
                _atomic_write(
                    self.path / self.FAILURES / self._filename(key),
                    json.dumps(body, ensure_ascii=False, sort_keys=True) + "\n",
                    exclusive=False,
                )

    @property
    def failures(self) -> dict[StoreKey, str]:
        return dict(self._failures)

    def documents(self, query_id: str | None = None, doc_type: DocType | None = None) -> list[Document]:
        """Documents sorted by (query id, type code, replicate index)."""
        out = []
        for key in sorted(self._records):
            if query_id is not None and key[0] != query_id:
                continue
            if doc_type is not None and key[1] != doc_type.code:
                continue
            out.append(self._records[key].document)
        return out

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents())

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: StoreKey) -> bool:
        return key in self._records

    def digest(self) -> str:
        """Content digest over every entry; creation timestamps are excluded."""
        h = hashlib.sha256(self.manifest_id.encode())
        for key in sorted(self._records):
            r = self._records[key]
            row = [*key, r.document.text, r.document.source.value, r.model_id, r.prompt_digest]
            h.update(json.dumps(row, ensure_ascii=False).encode("utf-8") + b"\n")
        return h.hexdigest()

    def write_manifest(self, manifest) -> None:
        if self.path is not None:
            _atomic_write(self.path / self.MANIFEST, manifest.to_json(), exclusive=False)


# --- shot pools -----------------------------------------------------------

def build_shot_pool(shot_queries: Sequence[tuple[Query, Document]], cfg: GenerationConfig, gateway) -> ShotPool:
    """Embed (query, top-1 doc) pairs, cluster them and sample m shots per cluster."""
    need = cfg.k_clusters * cfg.m_shots
    if len(shot_queries) < need:
        raise PreconditionError(f"need at least {need} (query, document) pairs, got {len(shot_queries)}")
    vectors = embed_pairs(shot_queries, gateway, cfg.embedding_model_id)
    assignment = kmeans(vectors, cfg.k_clusters, seed=cfg.seed)
    return sample_shots(assignment, shot_queries, cfg.m_shots, cfg.seed)


def _chat(gateway, prompt: Prompt, model_id: str, temperature: float, max_tokens: int, replicate: int = 0) -> str:
    req = ChatRequest.from_prompt(prompt, model_id, temperature, max_tokens)
    return gateway.chat(req, replicate_index=replicate)


def style_align_shots(
    pool: ShotPool,
    style: SflType,
    task: Task,
    gateway,
    *,
    model_id: str = DEFAULT_TRANSFORM_MODEL,
    temperature: float = TRANSFORM_TEMPERATURE,
    max_tokens: int = 1024,
) -> ShotPool:
    """Rewrite every shot document into ``style``. Any failure fails the whole pool."""
    if pool.style is not None:
        raise PreconditionError(f"shot pool is already aligned to {pool.style.code}")
    flat = [shot for lst in pool.shots for shot in lst]

    def rewrite(shot: Shot) -> str:
        prompt = render_style_transform(task, style, shot.document, shot.query)
        return _chat(gateway, prompt, model_id, temperature, max_tokens)

    workers = max(1, getattr(gateway, "parallelism", 1))
    with ThreadPoolExecutor(max_workers=workers) as ex:
        texts = iter(list(ex.map(rewrite, flat)))
    shots = tuple(tuple(replace(s, document=next(texts)) for s in lst) for lst in pool.shots)
    return ShotPool(shots=shots, seed=pool.seed, style=style)


# --- per-query generation -------------------------------------------------

class SelfDocBatch(list):
    """The documents generated for one query; ``failures`` maps replicate -> error."""

    def __init__(self, docs=(), failures: dict[int, str] | None = None):
        super().__init__(docs)
        self.failures = failures or {}


def prompt_digest(prompt: Prompt) -> str:
    raw = json.dumps(prompt.messages(), ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _replicate_prompt(query: Query, source, cfg: GenerationConfig, i: int) -> Prompt:
    if cfg.mode is Mode.TYPED_ZERO_SHOT:
        return render_generation(query.task, cfg.style, query.text)
    shots = [s for s in source.shots[i] if s.query_id != query.id and s.query != query.text]
    if not shots:
        raise PreconditionError(f"shot set {i} only contains the target query")
    return render_genread(query.task, [(s.query, s.document) for s in shots], query.text)


def output_doc_type(cfg: GenerationConfig, pool: ShotPool | None) -> DocType:
    if cfg.mode is Mode.TYPED_ZERO_SHOT:
        return DocType.of(cfg.style)
    if pool is not None and pool.style is not None:
        return DocType.of(pool.style)
    return GENREAD


def generate_self_docs(
    query: Query,
    pool: ShotPool | None,
    cfg: GenerationConfig,
    gateway,
    *,
    store: DocStore | None = None,
) -> SelfDocBatch:
    """Generate ``cfg.n_docs`` documents for one query.

    Few-shot mode feeds replicate i the shot list of cluster i, minus any
    shot drawn from the target query itself.  Per-replicate backend errors
    are recorded as failures instead of aborting the query.
    """
    if cfg.mode is Mode.GENREAD_FEW_SHOT:
        if pool is None:
            raise PreconditionError("few-shot generation needs a shot pool")
        if cfg.n_docs > pool.k:
            raise PreconditionError(f"n_docs={cfg.n_docs} exceeds the pool's {pool.k} shot lists")
    doc_type = output_doc_type(cfg, pool)
    manifest_id = store.manifest_id if store is not None else ""
    batch = SelfDocBatch()
    for i in range(cfg.n_docs):
        if store is not None:
            cached = store.get(query.id, doc_type, i)
            if cached is not None:
                batch.append(cached)
                continue
        try:
            prompt = _replicate_prompt(query, pool, cfg, i)
            text = _chat(gateway, prompt, cfg.model_id, cfg.temperature, cfg.max_tokens, replicate=i)
        except (BackendError, PreconditionError) as e:
            log.warning("generation failed for %s replicate %d: %s", query.id, i, e)
            batch.failures[i] = str(e)
            if store is not None:
                store.record_failure(query.id, doc_type, i, str(e))
            continue
        doc = Document(
            id=self_doc_id(query.id, doc_type, i, manifest_id),
            text=text,
            doc_type=doc_type,
            source=Source.SELF_GENERATED,
            origin_query_id=query.id,
            replicate_index=i,
        )
        if store is not None:
            doc = store.put(doc, cfg.model_id, prompt_digest(prompt))
        batch.append(doc)
    return batch


# --- corpus runs ----------------------------------------------------------

def generation_manifest(dataset, cfg: GenerationConfig, pool: ShotPool | None):
    inputs = {"shot_pool": pool.digest()} if pool is not None and cfg.mode is Mode.GENREAD_FEW_SHOT else {}
    return RunManifest(
        stage="generate",
        task=dataset.task,
        dataset_digest=dataset.content_digest,
        config=cfg.to_dict(),
        model_ids={"generation": cfg.model_id, "transform": cfg.transform_model_id, "embedding": cfg.embedding_model_id},
        temperatures={"generation": cfg.temperature, "transform": cfg.transform_temperature},
        seeds={"seed": cfg.seed},
        inputs=inputs,
        template_digest=template_digest(),
    )


@dataclass
class CorpusReport:
    store: DocStore
    n_queries: int
    n_generated: int
    failures: dict[str, dict[int, str]] = field(default_factory=dict)
    threshold: float = DEFAULT_FAILURE_THRESHOLD

    @property
    def n_failed(self) -> int:
        return sum(len(f) for f in self.failures.values())

    @property
    def failure_rate(self) -> float:
        total = self.n_generated + self.n_failed
        return self.n_failed / total if total else 0.0

    @property
    def exceeded(self) -> bool:
        return self.failure_rate > self.threshold


def generate_corpus(
    dataset,
    cfg: GenerationConfig,
    gateway,
    store: DocStore,
    pool: ShotPool | None = None,
    *,
    parallelism: int | None = None,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
) -> CorpusReport:
    """Generate documents for every query, persisting each as it completes."""
    store.write_manifest(generation_manifest(dataset, cfg, pool))
    workers = parallelism or max(1, getattr(gateway, "parallelism", 1))
    queries = [ex.query for ex in dataset.examples]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        batches = list(ex.map(lambda q: generate_self_docs(q, pool, cfg, gateway, store=store), queries))
    failures = {q.id: b.failures for q, b in zip(queries, batches) if b.failures}
    report = CorpusReport(store, len(queries), sum(len(b) for b in batches), failures, failure_threshold)
    if report.n_failed:
        log.warning("%d of %d generations failed (%.1f%%)", report.n_failed,
                    report.n_generated + report.n_failed, 100 * report.failure_rate)
    return report


def load_shot_pool(path: str | Path) -> ShotPool:
    return ShotPool.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


__all__ = [
    "CorpusReport",
    "DocStore",
    "GenerationConfig",
    "Mode",
    "SelfDocBatch",
    "StoreRecord",
    "build_shot_pool",
    "generate_corpus",
    "generate_self_docs",
    "generation_manifest",
    "load_shot_pool",
    "output_doc_type",
    "prompt_digest",
    "style_align_shots",
]
