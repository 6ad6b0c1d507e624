"""Answering queries over a mixed background."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from selfdocs.core import DocType, Document, Example, Query
from selfdocs.errors import BackendError, InsufficientDocuments
from selfdocs.gateway import ChatRequest
from selfdocs.mixing import MixPlan, Strategy, assemble_background, direct_mix, style_transform_mix
from selfdocs.prompts import render_qa

log = logging.getLogger(__name__)

QA_TEMPERATURE = 0.0


def answer_query(
    query: Query,
    background: str | None,
    gateway,
    model_id: str,
    *,
    temperature: float = QA_TEMPERATURE,
    max_tokens: int = 1024,
) -> str:
    """Greedy answer; ``background=None`` uses the no-retrieval prompt."""
    prompt = render_qa(query.task, background, query.text)
    return gateway.chat(ChatRequest.from_prompt(prompt, model_id, temperature, max_tokens))


@dataclass
class AnswerRun:
    answers: dict[str, str | None] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for qid in sorted(self.answers):
                rec = {"query_id": qid, "answer": self.answers[qid]}
                if qid in self.errors:
                    rec["error"] = self.errors[qid]
                f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    @staticmethod
    def read_jsonl(path: str | Path) -> dict[str, str | None]:
        out = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    out[rec["query_id"]] = rec["answer"]
        return out


def build_background_docs(
    example: Example,
    self_docs: Sequence[Document],
    plan: MixPlan,
    gateway,
    *,
    transform_model_id: str,
    partial_ok: bool = False,
) -> list[Document]:
    """Select (and for style mixing, rewrite) the documents for one query.

    With ``partial_ok`` a query whose generation partly failed is mixed with
    the documents that did get generated.
    """
    if partial_ok and 0 < len(self_docs) < plan.n_self:
        log.info("query %s: using %d of %d self documents", example.query.id, len(self_docs), plan.n_self)
        plan = MixPlan(plan.strategy, plan.k_wiki, len(self_docs), plan.order, plan.style)
    if plan.strategy is Strategy.STYLE_TRANSFORM_MIX:
        return style_transform_mix(
            example.retrieved, self_docs, plan, example.query.task, gateway, example.query,
            model_id=transform_model_id,
        )
    return direct_mix(example.retrieved, self_docs, plan)


def answer_dataset(
    examples: Sequence[Example],
    plan: MixPlan | None,
    gateway,
    *,
    model_id: str,
    store=None,
    self_doc_type: DocType | None = None,
    transform_model_id: str = "",
    budget: int | None = None,
    max_tokens: int = 1024,
    parallelism: int | None = None,
) -> AnswerRun:
    """Answer every example; backend failures become ``None`` answers."""
    failed_queries = {key[0] for key in store.failures} if store is not None else set()

    def one(ex: Example) -> tuple[str, str | None, str | None]:
        qid = ex.query.id
        try:
            background = None
            if plan is not None:
                self_docs = store.documents(qid, self_doc_type) if store is not None else []
                docs = build_background_docs(
                    ex, self_docs, plan, gateway,
                    transform_model_id=transform_model_id or model_id,
                    partial_ok=qid in failed_queries,
                )
                background = assemble_background(docs, budget)
            return qid, answer_query(ex.query, background, gateway, model_id, max_tokens=max_tokens), None
        except InsufficientDocuments as e:
            if e.side == "self" and e.have == 0 and qid in failed_queries:
                return qid, None, f"no generated documents: {e}"
            raise
        except BackendError as e:
            log.warning("query %s failed: %s", qid, e)
            return qid, None, str(e)

    workers = parallelism or max(1, getattr(gateway, "parallelism", 1))
    run = AnswerRun()
    with ThreadPoolExecutor(max_workers=workers) as ex:
        for qid, answer, err in ex.map(one, examples):
            run.answers[qid] = answer
            if err is not None:
                run.errors[qid] = err
    return run

