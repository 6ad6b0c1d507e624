"""Prompt templates for style transformation, document generation and QA.

Templates live as text files under ``templates/`` named
``<family>_<task>[_<style>].txt``.  A file is a sequence of sections, each
opened by a header line (``[system]``, ``[user]``, ``[shot]``, ``[target]``).

Arguments are substituted verbatim in a single pass; nothing is escaped, so
argument text that happens to contain ``{query}`` survives literally.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from selfdocs.core import SflType, Task
from selfdocs.errors import PreconditionError, TooManyShots

MAX_SHOTS = 5
SHOT_SEPARATOR = "\n\n\n\n"
PLACEHOLDER_MARKERS = ("{query}", "{context}", "{claim}", "{background}", "{wiki top1 context}")

_PLACEHOLDER = re.compile(r"\{(query|context|claim|background)\}")
_SECTION = re.compile(r"^\[(system|user|shot|target)\]$")


class Family(str, enum.Enum):
    STYLE_TRANSFORM = "style_transform"
    GENERATION = "generation"
    GENREAD = "genread"
    QA = "qa"
    QA_NO_RAG = "qa_norag"


_STYLED = {Family.STYLE_TRANSFORM, Family.GENERATION}


@dataclass(frozen=True)
class Prompt:
    user: str
    system: str | None = None

    def messages(self) -> list[dict[str, str]]:
        out = []
        if self.system is not None:
            out.append({"role": "system", "content": self.system})
        out.append({"role": "user", "content": self.user})
        return out


@dataclass(frozen=True)
class TemplateKey:
    family: Family
    task: Task
    style: SflType | None = None

    def __post_init__(self):
        if (self.family in _STYLED) != (self.style is not None):
            need = "requires" if self.family in _STYLED else "forbids"
            raise PreconditionError(f"template family {self.family.value} {need} a style")

    @property
    def filename(self) -> str:
        name = f"{self.family.value}_{self.task.value}"
        if self.style is not None:
            name += f"_{self.style.code}"
        return name + ".txt"


def all_template_keys() -> list[TemplateKey]:
    keys = []
    for task in Task:
        for family in Family:
            if family in _STYLED:
                keys.extend(TemplateKey(family, task, s) for s in SflType.all())
            else:
                keys.append(TemplateKey(family, task))
    return keys


def _template_dir():
    return resources.files("selfdocs.prompts") / "templates"


@lru_cache(maxsize=None)
def load_template(key: TemplateKey) -> dict[str, str]:
    text = (_template_dir() / key.filename).read_text(encoding="utf-8").removesuffix("\n")
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.split("\n"):
        m = _SECTION.match(line)
        if m:
            current = sections.setdefault(m.group(1), [])
        elif current is not None:
            current.append(line)
    return {name: "\n".join(lines) for name, lines in sections.items()}


@lru_cache(maxsize=1)
def reconstructed_templates() -> frozenset[str]:
    """File stems of templates synthesized by pattern rather than transcribed."""
    text = (_template_dir() / "RECONSTRUCTED").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def template_digest() -> str:
    """Digest over every template file; changes whenever any prompt text changes."""
    h = hashlib.sha256()
    for key in sorted(all_template_keys(), key=lambda k: k.filename):
        h.update(key.filename.encode())
        h.update((_template_dir() / key.filename).read_bytes())
    return h.hexdigest()


def _fill(template: str, **values: str) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name == "claim":
            name = "query"
        return values[name]

    return _PLACEHOLDER.sub(sub, template)


def _require(value: str, name: str) -> None:
    if not value:
        raise PreconditionError(f"{name} must be non-empty")


def render_style_transform(task: Task, style: SflType, context: str, query: str) -> Prompt:
    _require(context, "context")
    _require(query, "query")
    tpl = load_template(TemplateKey(Family.STYLE_TRANSFORM, task, style))
    return Prompt(user=_fill(tpl["user"], context=context, query=query))


def render_generation(task: Task, style: SflType, query: str) -> Prompt:
    _require(query, "query")
    tpl = load_template(TemplateKey(Family.GENERATION, task, style))
    return Prompt(system=tpl["system"], user=_fill(tpl["user"], query=query))


def render_genread(task: Task, shots, target_query: str) -> Prompt:
    """Few-shot prompt: one block per (query, document) shot, then the bare target."""
    shots = list(shots)
    if not shots:
        raise PreconditionError("GenRead prompt needs at least one shot")
    if len(shots) > MAX_SHOTS:
        raise TooManyShots(f"{len(shots)} shots given, at most {MAX_SHOTS} allowed")
    _require(target_query, "target_query")
    tpl = load_template(TemplateKey(Family.GENREAD, task))
    blocks = [_fill(tpl["shot"], query=q, context=d) for q, d in shots]
    blocks.append(_fill(tpl["target"], query=target_query))
    return Prompt(user=SHOT_SEPARATOR.join(blocks))


def render_qa(task: Task, background: str | None, query: str) -> Prompt:
    _require(query, "query")
    if background is None:
        tpl = load_template(TemplateKey(Family.QA_NO_RAG, task))
        return Prompt(system=tpl["system"], user=_fill(tpl["user"], query=query))
    tpl = load_template(TemplateKey(Family.QA, task))
    return Prompt(system=tpl["system"], user=_fill(tpl["user"], query=query, background=background))


def render_key(key: TemplateKey, **args: str) -> Prompt:
    """Render any template key; used by golden tests and tooling."""
    if key.family is Family.STYLE_TRANSFORM:
        return render_style_transform(key.task, key.style, args["context"], args["query"])
    if key.family is Family.GENERATION:
        return render_generation(key.task, key.style, args["query"])
    if key.family is Family.GENREAD:
        return render_genread(key.task, args["shots"], args["query"])
    if key.family is Family.QA:
        return render_qa(key.task, args["background"], args["query"])
    return render_qa(key.task, None, args["query"])


__all__ = [
    "Family",
    "MAX_SHOTS",
    "PLACEHOLDER_MARKERS",
    "Prompt",
    "TemplateKey",
    "all_template_keys",
    "load_template",
    "reconstructed_templates",
    "render_generation",
    "render_genread",
    "render_key",
    "render_qa",
    "render_style_transform",
    "template_digest",
]
