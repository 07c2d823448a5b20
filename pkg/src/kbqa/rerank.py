"""LLM re-ranking of one retrieval aspect."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from kbqa.errors import EmptySelection
from kbqa.llm import CompletionRequest, LLMClient
from kbqa.retrieval import LinkedEntity

DEFAULT_K = {"paths": 5, "relations": 10, "classes": 10}

INSTRUCTIONS = {
    "paths": (
        "For a given question please select five relevant candidate paths which might be "
        "useful for answering it in ranked order. If the number of candidates are five or less "
        "then just rerank the candidates. candidate paths are seperated by | symbol. The output "
        'should contain only relevant candidates seperated by "@@".'
    ),
    "classes": (
        "For a given question please select ten relevant candidate answer entity types which "
        "might be useful for answering it in ranked order. If the number of candidates are ten "
        "or less then just rerank the candidates. candidate answer entity types are seperated "
        'by | symbol. The output should contain only relevant candidates seperated by "@@".'
    ),
    "relations": (
        "For a given question please select ten relevant candidate relations which might be "
        "useful for answering it in ranked order. If the number of candidates are ten or less "
        "then just rerank the candidates. candidate relations are seperated by | symbol. The "
        'output should contain only relevant candidates seperated by "@@".'
    ),
}
HEADERS = {
    "paths": "candidate paths:",
    "classes": "candidate entity types:",
    "relations": "candidate Relations:",
}


@dataclass(frozen=True)
class RerankRequest:
    aspect: str
    question: str
    entities: tuple[LinkedEntity, ...]
    candidates: tuple[str, ...]
    k: int | None = None

    def __post_init__(self):
        if self.aspect not in INSTRUCTIONS:
            raise ValueError(f"unknown aspect {self.aspect!r}")
        if not self.candidates:
            raise ValueError("candidates must be non-empty")

    @property
    def target(self) -> int:
        return self.k if self.k is not None else DEFAULT_K[self.aspect]


def render_entities(entities: Sequence[LinkedEntity]) -> str:
    return "|".join(f"{e.mention} {e.entity_id}" for e in entities)


def build_rerank_prompt(req: RerankRequest) -> str:
    parts = [INSTRUCTIONS[req.aspect], f"question: {req.question}"]
    if req.aspect == "paths":
        parts.append(f"entity: {render_entities(req.entities)}")
    parts.append(HEADERS[req.aspect])
    parts.append("|\n".join(req.candidates))
    return "\n\n".join(parts)


def _norm(s: str) -> str:
    return " ".join(s.split())


def parse_rerank_response(text: str, candidates: Sequence[str], k: int) -> list[str]:
    """Keep LLM-proposed items that are candidates, then backfill in original order.

    The result is always a duplicate-free subset of ``candidates`` of length
    ``min(k, len(candidates))``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not candidates:
        raise EmptySelection("no candidates to select from")
    by_norm: dict[str, str] = {}
    for c in candidates:
        by_norm.setdefault(_norm(c), c)
    chosen: dict[str, None] = {}
    for item in (text or "").split("@@"):
        key = _norm(item.strip().strip("|"))
        if key in by_norm:
            chosen.setdefault(by_norm[key], None)
    limit = min(k, len(by_norm))
    picked = list(chosen)[:limit]
    for c in by_norm.values():
        if len(picked) >= limit:
            break
        if c not in chosen:
            picked.append(c)
    return picked


@dataclass(frozen=True)
class RerankOutcome:
    aspect: str
    prompt: str
    raw: str
    ranked: tuple[str, ...]


def rerank_aspect(llm: LLMClient, req: RerankRequest, model: str = "", temperature: float = 0.0,
                  request_id: str = "") -> RerankOutcome:
    """One LLM call: prompt, parse, enforce the subset contract."""
    prompt = build_rerank_prompt(req)
    raw = llm.complete(CompletionRequest.single(prompt, model, temperature, request_id=request_id))
    return RerankOutcome(req.aspect, prompt, raw, tuple(parse_rerank_response(raw, req.candidates, req.target)))
