"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class SelfDocsError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(SelfDocsError, ValueError):
    """An operation was called with arguments violating its contract."""


class UnknownCode(SelfDocsError, ValueError):
    def __init__(self, code: str):
        super().__init__(f"unknown document type code: {code!r}")
        self.code = code


# clustering

class KTooLarge(PreconditionError):
    def __init__(self, k: int, n: int):
        super().__init__(f"k={k} exceeds number of points ({n})")
        self.k = k
        self.n = n


class DegenerateInput(PreconditionError):
    pass


class ClusterTooSmall(PreconditionError):
    def __init__(self, cluster_index: int, size: int, m: int):
        super().__init__(f"cluster {cluster_index} has {size} members, need {m}")
        self.cluster_index = cluster_index
        self.size = size
        self.m = m


# prompts

class TooManyShots(PreconditionError):
    pass


# backends

class BackendError(SelfDocsError):
    """A chat or embedding backend failed."""

    def __init__(self, message: str, query_id: str | None = None):
        if query_id is not None:
            message = f"{message} (query {query_id})"
        super().__init__(message)
        self.query_id = query_id


class TransientBackendError(BackendError):
    """Retryable failure: timeout, HTTP 429 or 5xx."""


class BackendExhausted(BackendError):
    pass


class BackendEmptyResponse(BackendError):
    pass


class ReplayMiss(BackendError):
    def __init__(self, digest: str):
        super().__init__(f"no replay fixture for digest {digest}")
        self.digest = digest


# mixing

class InsufficientDocuments(PreconditionError):
    def __init__(self, side: str, have: int, need: int):
        super().__init__(f"not enough {side} documents: have {have}, need {need}")
        self.side = side
        self.have = have
        self.need = need


# evaluation

class MissingAnswers(SelfDocsError):
    def __init__(self, query_ids):
        self.query_ids = sorted(query_ids)
        preview = ", ".join(self.query_ids[:10])
        more = "" if len(self.query_ids) <= 10 else f" (+{len(self.query_ids) - 10} more)"
        super().__init__(f"missing answers for {len(self.query_ids)} queries: {preview}{more}")


class MissingRows(SelfDocsError):
    def __init__(self, rows):
        self.rows = sorted(rows)
        super().__init__(f"table is missing rows: {', '.join(self.rows)}")


class KeyMismatch(SelfDocsError):
    pass


class InsufficientDocs(SelfDocsError):
    def __init__(self, type_code: str, have: int, need: int):
        super().__init__(f"type {type_code}: have {have} documents, need {need}")
        self.type_code = type_code
        self.have = have
        self.need = need


# dataset io

class SchemaError(SelfDocsError, ValueError):
    def __init__(self, line_no: int, field: str, detail: str = ""):
        msg = f"line {line_no}: bad or missing field {field!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.line_no = line_no
        self.field = field


class DuplicateId(SelfDocsError, ValueError):
    def __init__(self, query_id: str, line_no: int | None = None):
        where = f" at line {line_no}" if line_no is not None else ""
        super().__init__(f"duplicate query id {query_id!r}{where}")
        self.query_id = query_id


class BadLabel(SchemaError):
    def __init__(self, line_no: int, label):
        super().__init__(line_no, "label", f"expected SUPPORTS or REFUTES, got {label!r}")
        self.label = label
