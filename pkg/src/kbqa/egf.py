"""Execution-guided feedback: re-prompt while the generated query answers nothing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

from kbqa.errors import KBQAError, LLMError
from kbqa.generate import Generation, read_generation
from kbqa.kb.store import AnswerSet
from kbqa.llm import CompletionRequest, LLMClient

FEEDBACK = (
    "The generated SPARQL gives an empty answer when executed on freebase KG, Please generate "
    "again a different executable SPARQL using the same context and constraints."
)
FEEDBACK_MESSAGE = FEEDBACK + "\n\nSPARQL:"
DEFAULT_MAX_ITERS = 4

NON_EMPTY = "NonEmptyAnswer"
EXHAUSTED = "MaxItersExhausted"
UNRECOVERABLE = "UnrecoverableError"


@dataclass
class EgfIteration:
    index: int
    prompt_delta: str
    raw: str
    sparql: str | None
    outcome: str  # "answer" | "empty" | "parse_error" | "exec_error"
    answers: AnswerSet | None = None
    error: str | None = None
    duplicate: bool = False
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prompt_delta": self.prompt_delta,
            "raw": self.raw,
            "sparql": self.sparql,
            "outcome": self.outcome,
            "answers": self.answers.to_json() if self.answers is not None else None,
            "error": self.error,
            "duplicate": self.duplicate,
        }


@dataclass
class EgfTrace:
    iterations: list[EgfIteration] = field(default_factory=list)
    status: str = EXHAUSTED
    llm_calls: int = 0
    error: str | None = None

    @property
    def generations(self) -> int:
        return len(self.iterations)

    @property
    def feedback_calls(self) -> int:
        # the initial generation is the only call that is not feedback-driven
        return max(0, self.llm_calls - 1)

    @property
    def final(self) -> EgfIteration | None:
        return self.iterations[-1] if self.iterations else None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "llm_calls": self.llm_calls,
            "feedback_calls": self.feedback_calls,
            "error": self.error,
            "iterations": [it.to_dict() for it in self.iterations],
        }


def build_egf_messages(context: str, generations: Sequence[str]) -> list[dict[str, str]]:
    """The conversation replayed to the LLM: the generation prompt, then each
    prior generation followed by the feedback instruction."""
    if not generations:
        raise ValueError("feedback needs at least one prior generation")
    messages = [{"role": "user", "content": context}]
    for raw in generations:
        messages.append({"role": "assistant", "content": raw})
        messages.append({"role": "user", "content": FEEDBACK_MESSAGE})
    return messages


def build_egf_prompt(context: str, generations: Sequence[str]) -> str:
    return "\n\n".join(m["content"] for m in build_egf_messages(context, generations))


def _execute(gen: Generation, backend) -> tuple[str, AnswerSet | None, str | None]:
    if gen.query is None:
        return "parse_error", None, gen.error
    try:
        answers = backend.execute(gen.query)
    except KBQAError as exc:
        return "exec_error", None, f"{type(exc).__name__}: {exc}"
    return ("empty" if answers.is_empty() else "answer"), answers, None


def run_egf(
    llm: LLMClient,
    backend,
    initial: Generation,
    context: str,
    max_iters: int = DEFAULT_MAX_ITERS,
    model: str = "",
    temperature: float = 0.0,
    request_id: str = "",
    clock=time.perf_counter,
) -> EgfTrace:
    """Execute ``initial``; on an empty answer, parse failure or execution
    error, ask again (at most ``max_iters`` times) until some query answers."""
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    trace = EgfTrace(llm_calls=1)
    raws: list[str] = []
    seen: set[str] = set()
    gen, delta = initial, ""
    while True:
        start = clock()
        outcome, answers, error = _execute(gen, backend)
        text = gen.sparql
        trace.iterations.append(EgfIteration(
            len(trace.iterations), delta, gen.raw, text, outcome, answers, error,
            duplicate=text is not None and text in seen, wall_time=clock() - start,
        ))
        if text is not None:
            seen.add(text)
        raws.append(gen.raw)
        if outcome == "answer":
            trace.status = NON_EMPTY
            return trace
        if len(trace.iterations) > max_iters:
            trace.status = EXHAUSTED
            return trace
        req = CompletionRequest.chat(
            build_egf_messages(context, raws), model, temperature,
            request_id=f"{request_id}:egf{len(raws)}",
        )
        trace.llm_calls += 1
        try:
            raw = llm.complete(req)
        except LLMError as exc:
            trace.status = UNRECOVERABLE
            trace.error = f"{type(exc).__name__}: {exc}"
            return trace
        gen, delta = read_generation(raw), FEEDBACK_MESSAGE
