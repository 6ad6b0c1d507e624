"""Combining retrieved and self-generated documents into a QA background."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from selfdocs.core import DocType, Document, Query, SflType, Source, Task
from selfdocs.errors import InsufficientDocuments, PreconditionError
from selfdocs.gateway import ChatRequest
from selfdocs.prompts import render_style_transform

log = logging.getLogger(__name__)

SEPARATOR = "\n\n"


class Strategy(str, enum.Enum):
    SELF_ONLY = "self-only"
    WIKI_ONLY = "wiki-only"
    DIRECT_MIX = "direct"
    STYLE_TRANSFORM_MIX = "style"


class Order(str, enum.Enum):
    WIKI_FIRST = "wiki-first"
    SELF_FIRST = "self-first"


@dataclass(frozen=True)
class MixPlan:
    strategy: Strategy
    k_wiki: int = 0
    n_self: int = 0
    order: Order = Order.WIKI_FIRST
    style: SflType | None = None

    def __post_init__(self):
        if self.k_wiki < 0 or self.n_self < 0:
            raise PreconditionError("k_wiki and n_self must be non-negative")
        s = self.strategy
        if s in (Strategy.DIRECT_MIX, Strategy.STYLE_TRANSFORM_MIX) and (self.k_wiki < 1 or self.n_self < 1):
            raise PreconditionError(f"{s.value} mixing needs k_wiki >= 1 and n_self >= 1")
        if s is Strategy.SELF_ONLY and (self.k_wiki != 0 or self.n_self < 1):
            raise PreconditionError("self-only plans take n_self >= 1 and no wiki documents")
        if s is Strategy.WIKI_ONLY and (self.n_self != 0 or self.k_wiki < 1):
            raise PreconditionError("wiki-only plans take k_wiki >= 1 and no self documents")
        if s is Strategy.STYLE_TRANSFORM_MIX and self.style is None:
            raise PreconditionError("style-transform mixing needs a target style")
        if s is not Strategy.STYLE_TRANSFORM_MIX and self.style is not None:
            raise PreconditionError("only style-transform mixing takes a style")


def _select(wiki: Sequence[Document], self_docs: Sequence[Document], plan: MixPlan):
    if len(wiki) < plan.k_wiki:
        raise InsufficientDocuments("wiki", len(wiki), plan.k_wiki)
    if len(self_docs) < plan.n_self:
        raise InsufficientDocuments("self", len(self_docs), plan.n_self)
    ranks = [d.rank for d in wiki]
    if any(r is None for r in ranks) or ranks != sorted(ranks):
        raise PreconditionError("wiki documents must be sorted by ascending rank")
    return list(wiki[: plan.k_wiki]), list(self_docs[: plan.n_self])


def _ordered(wiki: list[Document], self_docs: list[Document], order: Order) -> list[Document]:
    return wiki + self_docs if order is Order.WIKI_FIRST else self_docs + wiki


def direct_mix(wiki: Sequence[Document], self_docs: Sequence[Document], plan: MixPlan) -> list[Document]:
    """Top ``k_wiki`` retrieved plus the first ``n_self`` self documents, texts untouched."""
    w, s = _select(wiki, self_docs, plan)
    return _ordered(w, s, plan.order)


def style_transform_mix(
    wiki: Sequence[Document],
    self_docs: Sequence[Document],
    plan: MixPlan,
    task: Task,
    gateway,
    query: Query,
    *,
    model_id: str,
    temperature: float = 0.0,
    max_tokens: int = 1024,
) -> list[Document]:
    """Like :func:`direct_mix`, but each selected wiki document is first rewritten into ``plan.style``.

    A backend error on any rewrite propagates and fails the whole mix.
    """
    if plan.style is None:
        raise PreconditionError("style-transform mixing needs a target style")
    w, s = _select(wiki, self_docs, plan)
    doc_type = DocType.of(plan.style)

    def rewrite(doc: Document) -> Document:
        prompt = render_style_transform(task, plan.style, doc.text, query.text)
        req = ChatRequest.from_prompt(prompt, model_id, temperature, max_tokens)
        return Document(
            id=f"{doc.id}~{plan.style.code}",
            text=gateway.chat(req),
            doc_type=doc_type,
            source=Source.STYLE_TRANSFORMED,
            origin_query_id=doc.origin_query_id or query.id,
        )

    workers = max(1, min(len(w), getattr(gateway, "parallelism", 1)))
    with ThreadPoolExecutor(max_workers=workers) as ex:
        transformed = list(ex.map(rewrite, w))
    return _ordered(transformed, s, plan.order)


def assemble_background(docs: Sequence[Document], budget: int | None = None, separator: str = SEPARATOR) -> str:
    """Join document texts with a blank line, optionally cut to ``budget`` characters."""
    if not docs:
        raise PreconditionError("a background needs at least one document")
    text = separator.join(d.text for d in docs)
    if budget is not None and len(text) > budget:
        end = 0
        for i, d in enumerate(docs):
            end += len(d.text) + (len(separator) if i else 0)
            if end >= budget:
                break
        log.info("background truncated from %d to %d characters inside document %d of %d",
                 len(text), budget, i + 1, len(docs))
        text = text[:budget]
    return text
