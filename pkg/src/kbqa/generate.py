"""Few-shot SPARQL generation: budgets, exemplars, prompt rendering, parsing."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from kbqa.errors import BudgetExceeded, EmptyPool, GenerationUnparseable, KBQAError, ParseError
from kbqa.llm import CompletionRequest, LLMClient
from kbqa.logical_form.compile import sexpr_to_sparql
from kbqa.logical_form.sexpr import parse_sexpr
from kbqa.logical_form.sparql import SparqlQuery, parse_sparql, to_sparql
from kbqa.retrieval import LinkedEntity, RetrievalResult, result_from_record, truncate_topk

HEADER = (
    "Translate the following question to SPARQL for Freebase based on the candidate paths "
    "(represented using SPARQL), candidate entities, candidate relations and candidate entity "
    "types, which are separated by '|',  retrieved from Freebase by one or more retrievers. "
    "Please do not include any other relations, entities and entity types.\n\n"
    "Your final SPARQL can have three scenarios:\n\n"
    "1. When you need to just pick from candidate paths represented using SPARQL.\n\n"
    "2. When you need to extend one of candidate paths represented using SPARQL using the "
    "candidate relations and entity types.\n\n"
    "3. When you need to generate a new SPARQL only using the candidate entities, relations "
    "and entity types.\n\n"
    'For  entity type check please use this relation "type.object.type".\n\n'
    "Make sure that the original question can be regenerated only using the identified entity "
    "types, specific entities and relations used in the generated SPARQL."
)

SECTION_LABELS = {
    "paths": "candidate paths from Retriever represented using SPARQL:",
    "relations": "candidate relations from Retriever:",
    "classes": "candidate entity types from Retriever:",
}

DEFAULT_TOKEN_CEILING = 8192


def char_estimator(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class AspectBudget:
    paths: int
    relations: int
    classes: int
    shots: int = 5

    def __post_init__(self):
        if min(self.paths, self.relations, self.classes) < 1 or self.shots < 0:
            raise ValueError(f"invalid budget {self}")

    def as_mapping(self) -> dict[str, int]:
        return {"paths": self.paths, "relations": self.relations, "classes": self.classes}


def merge_budgets(num_retrievers: int, shots: int = 5) -> AspectBudget:
    if num_retrievers < 1:
        raise ValueError("need at least one retriever")
    if num_retrievers == 1:
        return AspectBudget(5, 10, 10, shots)
    if num_retrievers == 2:
        return AspectBudget(3, 5, 5, shots)
    n = num_retrievers
    return AspectBudget(math.ceil(5 / n), math.ceil(10 / n), math.ceil(10 / n), shots)


@dataclass(frozen=True)
class Exemplar:
    question: str
    entities: tuple[LinkedEntity, ...]
    retrievals: tuple[RetrievalResult, ...]
    sparql: str
    qid: str = ""

    def __post_init__(self):
        parse_sparql(self.sparql)


def load_exemplars(path: str | Path) -> list[Exemplar]:
    """Read an exemplar pool (JSONL).

    Each record carries ``question``, ``entities``, ``gold_sparql`` or
    ``gold_sexpr``, and ``retrievals``: a mapping from retriever id to a
    ``{paths, relations, classes}`` record.
    """
    pool = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                qid = rec.get("qid", f"line{lineno}")
                sparql = rec.get("gold_sparql")
                if not sparql:
                    sparql = to_sparql(sexpr_to_sparql(parse_sexpr(rec["gold_sexpr"])))
                retrievals = tuple(
                    result_from_record({**body, "qid": qid}, rid)
                    for rid, body in sorted(rec.get("retrievals", {}).items())
                )
                pool.append(Exemplar(
                    rec["question"],
                    tuple(LinkedEntity.from_dict(e) for e in rec.get("entities", [])),
                    retrievals,
                    sparql,
                    qid,
                ))
            except (KeyError, ValueError, TypeError, KBQAError) as exc:
                raise ParseError(lineno, str(exc), str(path)) from exc
    return pool


def select_exemplars(pool: Sequence[Exemplar], n: int, seed: int) -> list[Exemplar]:
    if n == 0:
        return []
    if not pool:
        raise EmptyPool("exemplar pool is empty")
    if len(pool) <= n:
        return list(pool)
    return random.Random(seed).sample(list(pool), n)


# open-weight models get fenced exemplars and an explicit test-question marker
DELIMITED_HEADER = HEADER.replace("the following question to SPARQL", "the following question after <<<>>> to SPARQL", 1)


@dataclass(frozen=True)
class PromptTemplate:
    variant: str = "standard"
    header: str = HEADER
    shots_open: str = "# FEW-SHOTS"
    shots_close: str | None = None
    test_marker: str | None = None
    # separator between the header, fences and blocks (blocks themselves always use a blank line)
    joiner: str = "\n\n"

    @classmethod
    def named(cls, variant: str) -> "PromptTemplate":
        if variant == "standard":
            return cls()
        if variant == "delimited":
            return cls("delimited", DELIMITED_HEADER, "####\n# FEW-SHOTS\nHere are some examples:",
                       "####", "<<<>>>", "\n")
        raise ValueError(f"unknown prompt template {variant!r}")


def _render_block(question: str, entities: Sequence[LinkedEntity],
                  retrievals: Sequence[RetrievalResult], gold: str | None) -> str:
    parts = [
        f"question: {question}",
        "candidate entities: " + "|".join(f"{e.mention} {e.entity_id}" for e in entities),
    ]
    for aspect in ("paths", "relations", "classes"):
        for r in retrievals:
            items = r.aspect(aspect)
            if items is None:
                continue
            parts.append(SECTION_LABELS[aspect])
            parts.append("|\n".join(items))
    parts.append("SPARQL:")
    if gold is not None:
        parts.append(gold)
    return "\n\n".join(parts)


def build_generation_prompt(
    question: str,
    entities: Sequence[LinkedEntity],
    retrievals: Sequence[RetrievalResult],
    exemplars: Sequence[Exemplar],
    template: PromptTemplate,
    budget: AspectBudget,
    token_ceiling: int | None = DEFAULT_TOKEN_CEILING,
    estimator: Callable[[str], int] = char_estimator,
) -> str:
    """Render the full generation prompt; the same budget truncates every block."""
    if not retrievals:
        raise ValueError("at least one retrieval result is required")
    caps = budget.as_mapping()
    sections = [template.header]
    if exemplars:
        sections.append(template.shots_open)
        sections.append("\n\n".join(
            _render_block(ex.question, ex.entities, [truncate_topk(r, caps) for r in ex.retrievals], ex.sparql)
            for ex in exemplars
        ))
        if template.shots_close:
            sections.append(template.shots_close)
    if template.test_marker:
        sections.append(template.test_marker)
    sections.append(_render_block(question, entities, [truncate_topk(r, caps) for r in retrievals], None))
    prompt = template.joiner.join(sections)
    if token_ceiling is not None:
        tokens = estimator(prompt)
        if tokens > token_ceiling:
            raise BudgetExceeded(tokens, token_ceiling)
    return prompt


@dataclass(frozen=True)
class FittedPrompt:
    prompt: str
    exemplars: tuple[Exemplar, ...]
    budget: AspectBudget


def fit_generation_prompt(
    question: str,
    entities: Sequence[LinkedEntity],
    retrievals: Sequence[RetrievalResult],
    exemplars: Sequence[Exemplar],
    template: PromptTemplate,
    budget: AspectBudget,
    token_ceiling: int = DEFAULT_TOKEN_CEILING,
    estimator: Callable[[str], int] = char_estimator,
) -> FittedPrompt:
    """Like ``build_generation_prompt`` but relieves overflow: first drop
    exemplars from the end, then shrink retrieval budgets one step at a time."""
    shots = list(exemplars)
    current = budget
    while True:
        try:
            prompt = build_generation_prompt(
                question, entities, retrievals, shots, template, current, token_ceiling, estimator
            )
            return FittedPrompt(prompt, tuple(shots), replace(current, shots=len(shots)))
        except BudgetExceeded:
            if shots:
                shots.pop()
                continue
            if max(current.paths, current.relations, current.classes) > 1:
                current = replace(
                    current,
                    paths=max(1, current.paths - 1),
                    relations=max(1, current.relations - 1),
                    classes=max(1, current.classes - 1),
                )
                continue
            raise


def parse_generation(raw: str) -> SparqlQuery:
    """Sanitize LLM output and parse it; failures become ``GenerationUnparseable``."""
    if "{" not in raw:
        raise GenerationUnparseable(raw, "no graph pattern in response")
    try:
        return parse_sparql(raw)
    except KBQAError as exc:
        raise GenerationUnparseable(raw, str(exc)) from exc


@dataclass
class Generation:
    raw: str
    query: SparqlQuery | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def sparql(self) -> str | None:
        return to_sparql(self.query) if self.query is not None else None


def generate_lf(llm: LLMClient, prompt: str, model: str = "", temperature: float = 0.0,
                request_id: str = "") -> Generation:
    """One LLM call; raises ``GenerationUnparseable`` (carrying the raw text)."""
    raw = llm.complete(CompletionRequest.single(prompt, model, temperature, request_id=request_id))
    return Generation(raw, parse_generation(raw))


def read_generation(raw: str) -> Generation:
    """Non-raising variant used inside the feedback loop."""
    try:
        return Generation(raw, parse_generation(raw))
    except GenerationUnparseable as exc:
        return Generation(raw, None, exc.reason)


__all__ = [
    "AspectBudget", "Exemplar", "FittedPrompt", "Generation", "PromptTemplate",
    "build_generation_prompt", "char_estimator", "fit_generation_prompt", "generate_lf",
    "load_exemplars", "merge_budgets", "parse_generation", "read_generation", "select_exemplars",
]
