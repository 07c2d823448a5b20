"""Direct denotational evaluation of s-expressions.

Deliberately naive: every step scans the full triple set and works on Python
sets, sharing nothing with the BGP executor except literal comparison. It is
the reference the compiler is checked against.
"""

from __future__ import annotations

from kbqa.errors import UnsupportedConstruct
from kbqa.kb.store import AnswerSet, TripleStore
from kbqa.logical_form.sexpr import (
    And,
    ArgMax,
    ArgMin,
    Class,
    Compare,
    Count,
    Entity,
    Join,
    Reverse,
)
from kbqa.logical_form.terms import DEFAULT_TYPE_RELATION, Literal, compare, sort_key


def _key(v) -> tuple:
    return sort_key(v) if isinstance(v, Literal) else (4, 0, v)


def _denote(e, triples, type_relation: str) -> set:
    if isinstance(e, Entity):
        return {e.id}
    if isinstance(e, Literal):
        return {e}
    if isinstance(e, Class):
        return {s for (s, p, o) in triples if p == type_relation and o == e.iri}
    if isinstance(e, And):
        return _denote(e.left, triples, type_relation) & _denote(e.right, triples, type_relation)
    if isinstance(e, Join):
        inner = _denote(e.body, triples, type_relation)
        if isinstance(e.relation, Reverse):
            r = e.relation.relation
            return {o for (s, p, o) in triples if p == r and s in inner}
        return {s for (s, p, o) in triples if p == e.relation and o in inner}
    if isinstance(e, Compare):
        return {
            s for (s, p, o) in triples
            if p == e.relation and isinstance(o, Literal) and compare(e.op, o, e.value)
        }
    if isinstance(e, (ArgMax, ArgMin)):
        members = _denote(e.body, triples, type_relation)
        pairs = [(s, _key(o)) for (s, p, o) in triples if p == e.relation and s in members]
        if not pairs:
            return set()
        pick = max if isinstance(e, ArgMax) else min
        best = pick(k for _, k in pairs)
        return {s for s, k in pairs if k == best}
    raise UnsupportedConstruct(type(e).__name__)


def eval_sexpr(e, store: TripleStore, type_relation: str = DEFAULT_TYPE_RELATION) -> AnswerSet:
    triples = store.triples
    if isinstance(e, Count):
        return AnswerSet(count=len(_denote(e.body, triples, type_relation)))
    return AnswerSet(values=frozenset(_denote(e, triples, type_relation)))
