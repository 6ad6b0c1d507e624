"""JSONL dataset loading, run manifests and result persistence."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from selfdocs import __version__
from selfdocs.core import WIKI, Document, Example, GoldAnswer, Query, Source, Task, Verdict
from selfdocs.errors import BadLabel, DuplicateId, SchemaError
from selfdocs.evaluation import ResultTable, write_table_csv

DEFAULT_LIMIT = 500


@dataclass(frozen=True)
class Dataset:
    task: Task
    examples: tuple[Example, ...]
    content_digest: str
    path: str | None = None

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def queries(self) -> list[tuple[Query, GoldAnswer]]:
        return [(ex.query, ex.gold) for ex in self.examples]

    @property
    def retrievals(self) -> dict[str, tuple[Document, ...]]:
        return {ex.query.id: ex.retrieved for ex in self.examples}

    def example(self, query_id: str) -> Example:
        for ex in self.examples:
            if ex.query.id == query_id:
                return ex
        raise KeyError(query_id)


def _nonempty_str(rec: dict, key: str, line_no: int) -> str:
    value = rec.get(key)
    if isinstance(value, int) and not isinstance(value, bool) and key == "id":
        value = str(value)
    if not isinstance(value, str) or not value.strip():
        raise SchemaError(line_no, key, "expected a non-empty string")
    return value


def _parse_gold(rec: dict, task: Task, line_no: int) -> GoldAnswer:
    if task is Task.FACT_VERIFICATION:
        if "label" not in rec:
            raise SchemaError(line_no, "label", "fact verification records need a label")
        label = rec["label"]
        if label not in (Verdict.SUPPORTS.value, Verdict.REFUTES.value):
            raise BadLabel(line_no, label)
        return GoldAnswer(label=Verdict(label))
    answers = rec.get("answers")
    if not isinstance(answers, list) or not answers or not all(isinstance(a, str) for a in answers):
        raise SchemaError(line_no, "answers", "expected a non-empty list of strings")
    return GoldAnswer(answers=tuple(answers))


def _parse_retrieved(rec: dict, query_id: str, line_no: int) -> tuple[Document, ...]:
    items = rec.get("retrieved", [])
    if not isinstance(items, list):
        raise SchemaError(line_no, "retrieved", "expected a list")
    docs = []
    for pos, item in enumerate(items, 1):
        if not isinstance(item, dict):
            raise SchemaError(line_no, "retrieved", f"entry {pos} is not an object")
        rank = item.get("rank")
        if not isinstance(rank, int) or isinstance(rank, bool) or rank != pos:
            raise SchemaError(line_no, "retrieved.rank", f"expected rank {pos}, got {rank!r}")
        text = item.get("text")
        if not isinstance(text, str) or not text:
            raise SchemaError(line_no, "retrieved.text", f"entry {pos} has no text")
        if "title" in item and not isinstance(item["title"], str):
            raise SchemaError(line_no, "retrieved.title", "expected a string")
        docs.append(
            Document(
                id=f"{query_id}#wiki{rank}",
                text=text,
                doc_type=WIKI,
                source=Source.RETRIEVED,
                origin_query_id=query_id,
                rank=rank,
            )
        )
    return tuple(docs)


def load_dataset(path: str | Path, task: Task, limit: int | None = DEFAULT_LIMIT) -> Dataset:
    """Read the first ``limit`` records of a JSONL file (``None`` reads all).

    Record schema: ``{id, question, answers | label, retrieved: [{rank, text, title?}]}``.
    Blank lines are skipped but still count toward line numbers in errors.
    """
    path = Path(path)
    examples: list[Example] = []
    seen: set[str] = set()
    h = hashlib.sha256(task.value.encode())
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if limit is not None and len(examples) >= limit:
                break
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(line_no, "<record>", f"invalid JSON: {e.msg}") from e
            if not isinstance(rec, dict):
                raise SchemaError(line_no, "<record>", "expected a JSON object")
            qid = _nonempty_str(rec, "id", line_no)
            if qid in seen:
                raise DuplicateId(qid, line_no)
            seen.add(qid)
            question = _nonempty_str(rec, "question", line_no)
            gold = _parse_gold(rec, task, line_no)
            retrieved = _parse_retrieved(rec, qid, line_no)
            examples.append(Example(Query(qid, question, task), gold, retrieved))
            h.update(b"\n" + line.rstrip("\r\n").encode("utf-8"))
    return Dataset(task, tuple(examples), h.hexdigest(), str(path))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunManifest:
    """Everything that determines a stage's outputs; ``manifest_id`` hashes all of it."""

    stage: str
    task: Task
    dataset_digest: str
    config: dict[str, Any] = field(default_factory=dict)
    model_ids: dict[str, str] = field(default_factory=dict)
    temperatures: dict[str, float] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    template_digest: str = ""
    tool_version: str = __version__

    def fields(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "task": self.task.value,
            "dataset_digest": self.dataset_digest,
            "config": self.config,
            "model_ids": self.model_ids,
            "temperatures": {k: float(v) for k, v in self.temperatures.items()},
            "seeds": self.seeds,
            "inputs": self.inputs,
            "template_digest": self.template_digest,
            "tool_version": self.tool_version,
        }

    @property
    def manifest_id(self) -> str:
        return hashlib.sha256(canonical_json(self.fields()).encode("utf-8")).hexdigest()[:32]

    def to_dict(self) -> dict[str, Any]:
        return {"manifest_id": self.manifest_id, **self.fields()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        m = cls(
            stage=d["stage"],
            task=Task(d["task"]),
            dataset_digest=d["dataset_digest"],
            config=d.get("config", {}),
            model_ids=d.get("model_ids", {}),
            temperatures=d.get("temperatures", {}),
            seeds=d.get("seeds", {}),
            inputs=d.get("inputs", {}),
            template_digest=d.get("template_digest", ""),
            tool_version=d.get("tool_version", __version__),
        )
        if "manifest_id" in d and d["manifest_id"] != m.manifest_id:
            raise ValueError("manifest_id does not match manifest contents")
        return m

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_results(path: str | Path, table: ResultTable) -> None:
    Path(path).write_text(
        json.dumps(table.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_results(path: str | Path) -> ResultTable:
    return ResultTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def export_results_csv(path: str | Path, table: ResultTable) -> None:
    write_table_csv(path, table.display_rows())
