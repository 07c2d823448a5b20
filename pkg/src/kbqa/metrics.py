"""Answer F1, three-valued logical-form equivalence, and dataset statistics."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from kbqa.dataset import Question
from kbqa.errors import KBQAError, MissingGoldForm, NotNormalized
from kbqa.kb.store import AnswerSet
from kbqa.logical_form.elements import ElementBag, Schema, extract_elements
from kbqa.logical_form.sparql import SparqlQuery

EQUIVALENT = "EQUIVALENT"
NON_EQUIVALENT = "NON_EQUIVALENT"
NO_DECISION = "NO_DECISION"


def answer_f1(pred: AnswerSet, gold: AnswerSet) -> tuple[float, float, float]:
    p_set, g_set = pred.normalized(), gold.normalized()
    if not g_set:
        # only reachable for unanswerable gold; an empty prediction is then exact
        return (1.0, 1.0, 1.0) if not p_set else (0.0, 0.0, 0.0)
    hit = len(p_set & g_set)
    precision = hit / len(p_set) if p_set else 0.0
    recall = hit / len(g_set)
    if precision + recall == 0:
        return 0.0, 0.0, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EmVerdict:
    verdict: str
    reason: str
    pred_bag: ElementBag | None = None
    gold_bag: ElementBag | None = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "pred_elements": self.pred_bag.to_dict() if self.pred_bag else None,
            "gold_elements": self.gold_bag.to_dict() if self.gold_bag else None,
        }


def em_classify(pred: SparqlQuery, gold: SparqlQuery, f1: float, schema: Schema) -> EmVerdict:
    """Rule (i): element multisets equal; rule (ii): element sets without literals equal.

    EQUIVALENT needs (i) and a perfect answer F1; a failed (ii) is
    NON_EQUIVALENT; anything else is left for manual review.
    """
    try:
        pb = extract_elements(pred, schema)
        gb = extract_elements(gold, schema)
    except KBQAError as exc:
        return EmVerdict(NO_DECISION, f"extraction_failed: {exc}")
    multiset_equal = pb == gb
    sets_equal = pb.element_set(include_literals=False) == gb.element_set(include_literals=False)
    if multiset_equal and f1 == 1.0:
        return EmVerdict(EQUIVALENT, "multiset_equal", pb, gb)
    if not sets_equal:
        return EmVerdict(NON_EQUIVALENT, "element_sets_differ", pb, gb)
    reason = "multiset_equal_f1_below_1" if multiset_equal else "multisets_differ"
    return EmVerdict(NO_DECISION, reason, pb, gb)


def _as_vectors(p, q) -> tuple[list[float], list[float]]:
    if isinstance(p, Mapping) or isinstance(q, Mapping):
        p, q = dict(p), dict(q)
        support = sorted(set(p) | set(q), key=str)
        return [p.get(k, 0.0) for k in support], [q.get(k, 0.0) for k in support]
    p, q = list(p), list(q)
    if len(p) != len(q):
        raise NotNormalized("distributions must share a support")
    return p, q


def _check(v: Sequence[float], name: str) -> None:
    if any(x < 0 for x in v):
        raise NotNormalized(f"{name} has negative mass")
    if abs(math.fsum(v) - 1.0) > 1e-9:
        raise NotNormalized(f"{name} sums to {math.fsum(v)!r}, not 1")


def js_divergence(p, q, base: float = 2.0) -> float:
    """Jensen-Shannon divergence; ``p``/``q`` are equal-length sequences or
    mappings over (the union of) their keys."""
    pv, qv = _as_vectors(p, q)
    _check(pv, "p")
    _check(qv, "q")

    def kl(a, m):
        return math.fsum(x * math.log(x / y, base) for x, y in zip(a, m) if x > 0)

    m = [(x + y) / 2 for x, y in zip(pv, qv)]
    value = 0.5 * kl(pv, m) + 0.5 * kl(qv, m)
    return min(1.0, max(0.0, value)) if base == 2 else max(0.0, value)


def normalize(counts: Mapping[str, float]) -> dict[str, float]:
    total = math.fsum(counts.values())
    return {k: v / total for k, v in counts.items()} if total else {}


@dataclass(frozen=True)
class StatsReport:
    domain_jsd: float
    function_jsd: float
    pct_new_relations: float
    relations_per_lf_source: float
    relations_per_lf_target: float
    tokens_per_question_source: float
    tokens_per_question_target: float

    def to_dict(self) -> dict[str, float]:
        return {k: round(v, 6) for k, v in self.__dict__.items()}


def _bags(questions: Sequence[Question], schema: Schema) -> list[ElementBag]:
    bags = []
    for q in questions:
        if not q.has_gold_form():
            raise MissingGoldForm(q.qid)
        bags.append(extract_elements(q.gold_query(), schema))
    return bags


def _function_dist(bags: Sequence[ElementBag]) -> dict[str, float]:
    counts: Counter = Counter()
    for bag in bags:
        tags = set(bag.functions) or {"NONE"}
        counts.update(tags)
    return normalize(counts)


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def dataset_stats(source: Sequence[Question], target: Sequence[Question],
                  schema: Schema | None = None) -> StatsReport:
    """Source/target shift statistics.

    Without a schema, one is inferred structurally from all gold forms.
    """
    if schema is None:
        for q in list(source) + list(target):
            if not q.has_gold_form():
                raise MissingGoldForm(q.qid)
        schema = Schema.infer([q.gold_query() for q in list(source) + list(target)])
    src_bags, tgt_bags = _bags(source, schema), _bags(target, schema)
    domains_s = normalize(Counter(q.domain or "unknown" for q in source))
    domains_t = normalize(Counter(q.domain or "unknown" for q in target))
    seen = set().union(*(set(b.relations) for b in src_bags)) if src_bags else set()
    new = sum(1 for b in tgt_bags if set(b.relations) - seen)
    return StatsReport(
        domain_jsd=js_divergence(domains_s, domains_t),
        function_jsd=js_divergence(_function_dist(src_bags), _function_dist(tgt_bags)),
        pct_new_relations=100.0 * new / len(tgt_bags) if tgt_bags else 0.0,
        relations_per_lf_source=_mean([sum(b.relations.values()) for b in src_bags]),
        relations_per_lf_target=_mean([sum(b.relations.values()) for b in tgt_bags]),
        tokens_per_question_source=_mean([len(q.question.split()) for q in source]),
        tokens_per_question_target=_mean([len(q.question.split()) for q in target]),
    )
