"""Scoring (EM, token F1, verdict parsing), report tables and audit sampling."""

from __future__ import annotations

import csv
import enum
import math
import random
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Iterable, Mapping, Sequence

from selfdocs.core import (
    ALL_SFL_TYPES,
    TASK_ORDER,
    Document,
    Ideational,
    Interpersonal,
    Metric,
    SflType,
    Task,
    Textual,
    Verdict,
)
from selfdocs.errors import InsufficientDocs, KeyMismatch, MissingAnswers, MissingRows, PreconditionError

AVERAGE = "Average"
_PUNCT = set(string.punctuation)
_ARTICLES = {"a", "an", "the"}


def round_half_up(x: float, ndigits: int = 1) -> float:
    """Display rounding; 57.25 -> 57.3 (Python's round() would give 57.2)."""
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def decimal_mean(values: Sequence[float]) -> float:
    """Mean of printed table values in decimal arithmetic, so 205.8 / 4 is 51.45 and not 51.4499..."""
    return float(sum(Decimal(repr(v)) for v in values) / len(values))


# --- answer metrics -------------------------------------------------------

def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    return " ".join(tok for tok in s.split() if tok not in _ARTICLES)


def exact_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise PreconditionError("exact_match needs at least one gold answer")
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: Sequence[str]) -> float:
    """Token-level F1 against each gold answer; the best match wins."""
    if not golds:
        raise PreconditionError("token_f1 needs at least one gold answer")
    pred_tokens = normalize_answer(pred).split()
    return max(_f1(pred_tokens, normalize_answer(g).split()) for g in golds)


class ParsedVerdict(str, enum.Enum):
    SUPPORTS = "SUPPORTS"
    REFUTES = "REFUTES"
    UNPARSEABLE = "UNPARSEABLE"


_LEADING_JUNK = re.compile(r"^[\s" + re.escape(string.punctuation) + r"]+")
_FIRST_WORD = re.compile(r"[a-z]+")


def parse_fever(pred: str) -> ParsedVerdict:
    s = _LEADING_JUNK.sub("", pred.casefold())
    m = _FIRST_WORD.match(s)
    word = m.group(0) if m else ""
    if word == "true":
        return ParsedVerdict.SUPPORTS
    if word == "false":
        return ParsedVerdict.REFUTES
    return ParsedVerdict.UNPARSEABLE


# --- per-run evaluation ---------------------------------------------------

class ParseStatus(str, enum.Enum):
    OK = "ok"
    UNPARSEABLE = "unparseable"
    GENERATION_FAILED = "generation_failed"


@dataclass(frozen=True)
class PerQueryScore:
    query_id: str
    metric: Metric
    value: float
    prediction: str
    parse_status: ParseStatus = ParseStatus.OK

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"score {self.value} outside [0, 1]")
        if self.parse_status is not ParseStatus.OK and self.value != 0.0:
            raise ValueError("failed or unparseable predictions must score 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "metric": self.metric.value,
            "value": self.value,
            "prediction": self.prediction,
            "parse_status": self.parse_status.value,
        }


def score_answer(task: Task, query_id: str, prediction: str | None, gold) -> PerQueryScore:
    metric = task.metric
    if prediction is None:
        return PerQueryScore(query_id, metric, 0.0, "", ParseStatus.GENERATION_FAILED)
    if task is Task.FACT_VERIFICATION:
        verdict = parse_fever(prediction)
        if verdict is ParsedVerdict.UNPARSEABLE:
            return PerQueryScore(query_id, metric, 0.0, prediction, ParseStatus.UNPARSEABLE)
        value = float(verdict.value == Verdict(gold.label).value)
    elif metric is Metric.EM:
        value = float(exact_match(prediction, gold.answers))
    else:
        value = token_f1(prediction, gold.answers)
    return PerQueryScore(query_id, metric, value, prediction)


def mean_percent(scores: Sequence[PerQueryScore]) -> float:
    """Unrounded 100 x mean score (0 for an empty run)."""
    if not scores:
        return 0.0
    return 100.0 * math.fsum(s.value for s in scores) / len(scores)


def evaluate_run(dataset, answers: Mapping[str, str | None], task: Task | None = None):
    """Score every query of ``dataset``; ``None`` answers mark failed generations.

    Returns ``(scores, aggregate)`` with scores ordered by query id and the
    aggregate as a percentage rounded half-up to one decimal.
    """
    task = task or dataset.task
    missing = [ex.query.id for ex in dataset.examples if ex.query.id not in answers]
    if missing:
        raise MissingAnswers(missing)
    scores = [
        score_answer(task, ex.query.id, answers[ex.query.id], ex.gold)
        for ex in sorted(dataset.examples, key=lambda e: e.query.id)
    ]
    return scores, round_half_up(mean_percent(scores), 1)


# --- report tables --------------------------------------------------------

Column = Task | str


def _column_label(col: Column) -> str:
    return col.label if isinstance(col, Task) else col


def _parse_column(label: str) -> Column:
    if label == AVERAGE:
        return AVERAGE
    for t in Task:
        if label in (t.label, t.value):
            return t
    raise KeyError(f"unknown column {label!r}")


@dataclass
class ResultTable:
    """Percent scores: row label -> task -> value.

    ``averages`` holds explicitly reported averages; rows without one get
    the unweighted mean of their four task cells.
    """

    rows: dict[str, dict[Task, float]] = field(default_factory=dict)
    averages: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for row, cells in self.rows.items():
            for task, v in cells.items():
                self._check(row, task, v)

    @staticmethod
    def _check(row, col, v):
        if not (0.0 <= v <= 100.0) or math.isnan(v):
            raise ValueError(f"cell {row}/{_column_label(col)} = {v} outside [0, 100]")

    def set(self, row: str, task: Task, value: float) -> None:
        self._check(row, task, value)
        self.rows.setdefault(row, {})[task] = value

    def get(self, row: str, col: Column) -> float | None:
        if col == AVERAGE:
            return self.average(row)
        return self.rows.get(row, {}).get(col)

    def average(self, row: str) -> float | None:
        if row in self.averages:
            return self.averages[row]
        cells = self.rows.get(row, {})
        if all(t in cells for t in TASK_ORDER):
            return decimal_mean([cells[t] for t in TASK_ORDER])
        return None

    def columns(self) -> list[Column]:
        return [*TASK_ORDER, AVERAGE]

    def merge(self, other: "ResultTable") -> "ResultTable":
        out = ResultTable(
            {r: dict(c) for r, c in self.rows.items()}, dict(self.averages), dict(self.metadata)
        )
        for row, cells in other.rows.items():
            for task, v in cells.items():
                out.set(row, task, v)
        out.averages.update(other.averages)
        ids = list(self.metadata.get("manifest_ids", [])) + [
            m for m in other.metadata.get("manifest_ids", []) if m not in self.metadata.get("manifest_ids", [])
        ]
        if ids:
            out.metadata["manifest_ids"] = ids
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": {r: {t.value: v for t, v in cells.items()} for r, cells in self.rows.items()},
            "averages": dict(self.averages),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ResultTable":
        rows = {r: {Task(t): float(v) for t, v in cells.items()} for r, cells in d.get("rows", {}).items()}
        return cls(rows, {r: float(v) for r, v in d.get("averages", {}).items()}, dict(d.get("metadata", {})))

    def display_rows(self) -> list[list[str]]:
        """Header plus one row per table row, cells rounded to one decimal."""
        out = [["row", *(_column_label(c) for c in self.columns())]]
        for row in self.rows:
            cells = []
            for col in self.columns():
                v = self.get(row, col)
                cells.append("" if v is None else f"{round_half_up(v, 1):.1f}")
            out.append([row, *cells])
        return out


DIMENSIONS: tuple[tuple[str, str, Any], ...] = (
    ("Ideational", "Fine-Grain", Ideational.FINE_GRAIN),
    ("Ideational", "Coarse-Grain", Ideational.COARSE_GRAIN),
    ("Interpersonal", "Authoritative", Interpersonal.AUTHORITATIVE),
    ("Interpersonal", "Conversational", Interpersonal.CONVERSATIONAL),
    ("Textual", "Structured", Textual.STRUCTURED),
    ("Textual", "Unstructured", Textual.UNSTRUCTURED),
)


def _has_value(t: SflType, value) -> bool:
    return value in (t.interpersonal, t.ideational, t.textual)


def aggregate_dimensions(table: ResultTable) -> ResultTable:
    """Average the eight typed rows by each axis value (four rows apiece).

    Untyped rows (Wiki, GenRead, mixes) are ignored.  Cells are rounded to
    one decimal; the row average is then taken over the rounded cells.
    """
    missing = [t.code for t in ALL_SFL_TYPES if t.code not in table.rows]
    if missing:
        raise MissingRows(missing)
    out = ResultTable(metadata={"aggregated_from": list(table.metadata.get("manifest_ids", []))})
    for _, label, value in DIMENSIONS:
        members = [t.code for t in ALL_SFL_TYPES if _has_value(t, value)]
        for task in TASK_ORDER:
            vals = [table.rows[code].get(task) for code in members]
            if any(v is None for v in vals):
                continue
            out.set(label, task, round_half_up(decimal_mean(vals), 1))
    return out


@dataclass
class DeltaTable:
    rows: dict[str, dict[Column, float]] = field(default_factory=dict)

    def display_rows(self) -> list[list[str]]:
        cols: list[Column] = [*TASK_ORDER, AVERAGE]
        out = [["row", *(_column_label(c) for c in cols)]]
        for row, cells in self.rows.items():
            out.append([row, *("" if c not in cells else format_delta(cells[c]) for c in cols)])
        return out


def format_delta(d: float) -> str:
    r = round_half_up(d, 1)
    if r == 0:
        return "±0.0"
    return f"{r:+.1f}"


def delta_table(current: ResultTable, baseline: ResultTable, row_map: Mapping[str, str] | None = None) -> DeltaTable:
    """Signed one-decimal differences current - baseline, cell by cell.

    ``row_map`` maps a current row label to its baseline label when they
    differ (e.g. ``"AFU/style"`` -> ``"AFU"``).
    """
    row_map = row_map or {}
    out = DeltaTable()
    for row in current.rows:
        base_row = row_map.get(row, row)
        if base_row not in baseline.rows:
            raise KeyMismatch(f"baseline has no row {base_row!r}")
        cells: dict[Column, float] = {}
        for col in current.columns():
            cur = current.get(row, col)
            if cur is None:
                continue
            base = baseline.get(base_row, col)
            if base is None:
                raise KeyMismatch(f"baseline has no cell {base_row}/{_column_label(col)}")
            cells[col] = round_half_up(cur - base, 1)
        out.rows[row] = cells
    return out


def write_table_csv(path, display_rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(display_rows)


# --- audit sampling -------------------------------------------------------

AUDIT_COLUMNS = ("doc_id", "type_code", "text", "interpersonal_ok", "ideational_ok", "textual_ok")


@dataclass(frozen=True)
class AuditRow:
    doc_id: str
    type_code: str
    text: str


def audit_sample(store: Iterable[Document], per_type: int = 15, seed: int = 0) -> list[AuditRow]:
    """Seeded uniform sample of ``per_type`` documents for each of the eight types."""
    if per_type < 1:
        raise PreconditionError("per_type must be positive")
    by_type: dict[str, list[Document]] = {t.code: [] for t in ALL_SFL_TYPES}
    for doc in store:
        if doc.doc_type.sfl is not None:
            by_type[doc.doc_type.code].append(doc)
    rng = random.Random(seed)
    rows: list[AuditRow] = []
    for t in ALL_SFL_TYPES:
        docs = sorted(by_type[t.code], key=lambda d: d.id)
        if len(docs) < per_type:
            raise InsufficientDocs(t.code, len(docs), per_type)
        rows.extend(AuditRow(d.id, t.code, d.text) for d in rng.sample(docs, per_type))
    return rows


def write_audit_csv(path, rows: Sequence[AuditRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(AUDIT_COLUMNS)
        for r in rows:
            w.writerow([r.doc_id, r.type_code, r.text, "", "", ""])
