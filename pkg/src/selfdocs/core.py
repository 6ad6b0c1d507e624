"""Shared domain vocabulary: tasks, document-type taxonomy, queries and documents."""

from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Any

from selfdocs.errors import PreconditionError, UnknownCode


class Metric(str, enum.Enum):
    EM = "EM"
    F1 = "F1"


class Task(str, enum.Enum):
    OPEN_DOMAIN_QA = "open_domain_qa"
    MULTI_HOP_QA = "multi_hop_qa"
    FACT_VERIFICATION = "fact_verification"
    LONG_FORM_QA = "long_form_qa"

    @property
    def metric(self) -> Metric:
        return _TASK_METRIC[self]

    @property
    def label(self) -> str:
        """Column header used in report tables (the benchmark name)."""
        return _TASK_LABEL[self]

    @classmethod
    def parse(cls, name: str) -> "Task":
        key = name.strip().lower().replace("-", "_")
        if key in _TASK_ALIASES:
            return _TASK_ALIASES[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown task {name!r}") from None


_TASK_METRIC = {
    Task.OPEN_DOMAIN_QA: Metric.EM,
    Task.MULTI_HOP_QA: Metric.F1,
    Task.FACT_VERIFICATION: Metric.EM,
    Task.LONG_FORM_QA: Metric.F1,
}
_TASK_LABEL = {
    Task.OPEN_DOMAIN_QA: "TQA",
    Task.MULTI_HOP_QA: "HotpotQA",
    Task.FACT_VERIFICATION: "FEVER",
    Task.LONG_FORM_QA: "ELI5",
}
_TASK_ALIASES = {
    "tqa": Task.OPEN_DOMAIN_QA,
    "triviaqa": Task.OPEN_DOMAIN_QA,
    "hotpotqa": Task.MULTI_HOP_QA,
    "fever": Task.FACT_VERIFICATION,
    "eli5": Task.LONG_FORM_QA,
}

# Column order of every report table.
TASK_ORDER: tuple[Task, ...] = (
    Task.OPEN_DOMAIN_QA,
    Task.MULTI_HOP_QA,
    Task.FACT_VERIFICATION,
    Task.LONG_FORM_QA,
)


class Interpersonal(str, enum.Enum):
    AUTHORITATIVE = "Authoritative"
    CONVERSATIONAL = "Conversational"


class Ideational(str, enum.Enum):
    FINE_GRAIN = "Fine-Grain"
    COARSE_GRAIN = "Coarse-Grain"


class Textual(str, enum.Enum):
    STRUCTURED = "Structured"
    UNSTRUCTURED = "Unstructured"


@dataclass(frozen=True)
class SflType:
    """One of the eight tone x granularity x structure document types."""

    interpersonal: Interpersonal
    ideational: Ideational
    textual: Textual

    @property
    def code(self) -> str:
        return sfl_code(self)

    def __str__(self) -> str:
        return self.code

    @classmethod
    def all(cls) -> tuple["SflType", ...]:
        return ALL_SFL_TYPES


def sfl_code(t: SflType) -> str:
    return t.interpersonal.value[0] + t.ideational.value[0] + t.textual.value[0]


ALL_SFL_TYPES: tuple[SflType, ...] = tuple(
    SflType(i, d, t) for i, d, t in itertools.product(Interpersonal, Ideational, Textual)
)
_BY_CODE = {sfl_code(t): t for t in ALL_SFL_TYPES}


def parse_sfl_code(code: str) -> SflType:
    try:
        return _BY_CODE[code.upper()]
    except (KeyError, AttributeError):
        raise UnknownCode(code) from None


class DocKind(str, enum.Enum):
    SFL = "sfl"
    WIKI = "wiki"
    GENREAD = "genread"


@dataclass(frozen=True)
class DocType:
    """An SFL type, or one of the two untyped flavors (retrieved wiki text, plain GenRead)."""

    kind: DocKind
    sfl: SflType | None = None

    def __post_init__(self):
        if (self.kind is DocKind.SFL) != (self.sfl is not None):
            raise PreconditionError("only SFL document types carry an SflType")

    @classmethod
    def of(cls, sfl: SflType) -> "DocType":
        return cls(DocKind.SFL, sfl)

    @property
    def code(self) -> str:
        if self.sfl is not None:
            return self.sfl.code
        return "WIKI" if self.kind is DocKind.WIKI else "GENREAD"

    @classmethod
    def parse(cls, code: str) -> "DocType":
        upper = code.upper()
        if upper == "WIKI":
            return WIKI
        if upper == "GENREAD":
            return GENREAD
        return cls.of(parse_sfl_code(code))

    def __str__(self) -> str:
        return self.code


WIKI = DocType(DocKind.WIKI)
GENREAD = DocType(DocKind.GENREAD)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    task: Task

    def __post_init__(self):
        if not self.text:
            raise PreconditionError(f"query {self.id!r} has empty text")


class Verdict(str, enum.Enum):
    SUPPORTS = "SUPPORTS"
    REFUTES = "REFUTES"


@dataclass(frozen=True)
class GoldAnswer:
    answers: tuple[str, ...] = ()
    label: Verdict | None = None

    def __post_init__(self):
        if self.label is None and not self.answers:
            raise PreconditionError("gold answer needs at least one answer string or a label")
        if self.label is not None and self.answers:
            raise PreconditionError("gold answer cannot carry both answers and a label")

    def check_task(self, task: Task) -> None:
        if task is Task.FACT_VERIFICATION and self.label is None:
            raise PreconditionError("fact verification gold must be a SUPPORTS/REFUTES label")
        if task is not Task.FACT_VERIFICATION and not self.answers:
            raise PreconditionError(f"{task.value} gold must carry answer strings")


class Source(str, enum.Enum):
    RETRIEVED = "retrieved"
    SELF_GENERATED = "self_generated"
    STYLE_TRANSFORMED = "style_transformed"


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    doc_type: DocType
    source: Source
    origin_query_id: str | None = None
    replicate_index: int | None = None
    rank: int | None = None

    def __post_init__(self):
        if not self.text:
            raise PreconditionError(f"document {self.id!r} has empty text")
        if self.source is Source.RETRIEVED and (self.rank is None or self.rank < 1):
            raise PreconditionError("retrieved documents need a positive rank")
        if self.source is Source.SELF_GENERATED and (
            self.origin_query_id is None or self.replicate_index is None
        ):
            raise PreconditionError("self-generated documents need origin_query_id and replicate_index")
        if self.replicate_index is not None and self.replicate_index < 0:
            raise PreconditionError("replicate_index must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "doc_type": self.doc_type.code,
            "source": self.source.value,
            "origin_query_id": self.origin_query_id,
            "replicate_index": self.replicate_index,
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Document":
        return cls(
            id=d["id"],
            text=d["text"],
            doc_type=DocType.parse(d["doc_type"]),
            source=Source(d["source"]),
            origin_query_id=d.get("origin_query_id"),
            replicate_index=d.get("replicate_index"),
            rank=d.get("rank"),
        )


def self_doc_id(origin_query_id: str, doc_type: DocType, replicate_index: int, manifest_id: str) -> str:
    """Stable id for a generated document, usable as a cache key."""
    raw = "\x1f".join([origin_query_id, doc_type.code, str(replicate_index), manifest_id])
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:24]


@dataclass(frozen=True)
class Example:
    """A query paired with its gold answer and ranked retrievals."""

    query: Query
    gold: GoldAnswer
    retrieved: tuple[Document, ...] = field(default_factory=tuple)
