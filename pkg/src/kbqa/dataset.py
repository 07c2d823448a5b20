"""Question records shared by the pipeline, evaluation and statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from kbqa.errors import KBQAError, MissingGoldForm, ParseError
from kbqa.kb.store import AnswerSet
from kbqa.logical_form.compile import sexpr_to_sparql
from kbqa.logical_form.sexpr import parse_sexpr
from kbqa.logical_form.sparql import SparqlQuery, parse_sparql
from kbqa.retrieval import LinkedEntity


@dataclass(frozen=True)
class Question:
    """One line of a dataset file:
    ``{qid, question, entities: [{mention, mid, label}], gold_sexpr?, gold_sparql?,
    gold_answers: [...], domain?}``."""

    qid: str
    question: str
    entities: tuple[LinkedEntity, ...] = ()
    gold_sexpr: str | None = None
    gold_sparql: str | None = None
    gold_answers: tuple[str, ...] | None = None
    domain: str | None = None

    def gold_query(self) -> SparqlQuery:
        """The gold logical form as SPARQL (SPARQL text wins over the s-expression)."""
        if self.gold_sparql:
            return parse_sparql(self.gold_sparql)
        if self.gold_sexpr:
            return sexpr_to_sparql(parse_sexpr(self.gold_sexpr))
        raise MissingGoldForm(self.qid)

    def has_gold_form(self) -> bool:
        return bool(self.gold_sparql or self.gold_sexpr)

    def gold_answer_set(self) -> AnswerSet | None:
        if self.gold_answers is None:
            return None
        # gold answers are already normalized strings (ids, literal values, counts)
        return AnswerSet(values=frozenset(self.gold_answers))

    @classmethod
    def from_dict(cls, rec: dict) -> "Question":
        answers = rec.get("gold_answers")
        return cls(
            qid=str(rec["qid"]),
            question=rec["question"],
            entities=tuple(LinkedEntity.from_dict(e) for e in rec.get("entities", [])),
            gold_sexpr=rec.get("gold_sexpr"),
            gold_sparql=rec.get("gold_sparql"),
            gold_answers=tuple(str(a) for a in answers) if answers is not None else None,
            domain=rec.get("domain"),
        )


def load_dataset(path: str | Path) -> list[Question]:
    out: list[Question] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                q = Question.from_dict(json.loads(line))
            except (KeyError, ValueError, TypeError, KBQAError) as exc:
                raise ParseError(lineno, str(exc), str(path)) from exc
            if q.qid in seen:
                raise ParseError(lineno, f"duplicate qid {q.qid}", str(path))
            seen.add(q.qid)
            out.append(q)
    return out
