"""Evaluate ``SparqlQuery`` objects against a ``TripleStore`` by BGP matching."""

from __future__ import annotations

from kbqa.kb.store import AnswerSet, Node, TripleStore, node_key
from kbqa.logical_form.sparql import Iri, SparqlQuery, Triple, Var, validate_query
from kbqa.logical_form.terms import Literal, compare, sort_key

Binding = dict[Var, Node]


def _resolve(term, binding: Binding):
    if isinstance(term, Var):
        return binding.get(term)
    if isinstance(term, Iri):
        return term.value
    return term


def _plan(patterns: tuple[Triple, ...]) -> list[Triple]:
    """Greedy join order: always take the pattern with the most bound positions."""
    remaining = list(patterns)
    bound: set[Var] = set()
    order = []
    while remaining:
        def score(t: Triple) -> tuple[int, int]:
            n = sum(1 for x in (t.s, t.p, t.o) if not isinstance(x, Var) or x in bound)
            return (n, -remaining.index(t))

        best = max(remaining, key=score)
        remaining.remove(best)
        order.append(best)
        bound.update(x for x in (best.s, best.p, best.o) if isinstance(x, Var))
    return order


def _bind(binding: Binding, term, value: Node) -> Binding | None:
    if not isinstance(term, Var):
        return binding
    current = binding.get(term)
    if current is None:
        new = dict(binding)
        new[term] = value
        return new
    return binding if current == value else None


def _match(store: TripleStore, t: Triple, binding: Binding) -> list[Binding]:
    s, p, o = (_resolve(x, binding) for x in (t.s, t.p, t.o))
    out = []
    if p is not None:
        if not isinstance(p, str):
            return out
        if s is not None and o is not None:
            if o in store.objects(s, p):
                out.append(binding)
        elif s is not None:
            for obj in store.objects(s, p):
                b = _bind(binding, t.o, obj)
                if b is not None:
                    out.append(b)
        elif o is not None:
            for subj in store.subjects(p, o):
                b = _bind(binding, t.s, subj)
                if b is not None:
                    out.append(b)
        else:
            for subj, obj in store.pairs(p):
                b = _bind(binding, t.s, subj)
                b = _bind(b, t.o, obj) if b is not None else None
                if b is not None:
                    out.append(b)
        return out
    for ts, tp, to in store:
        if (s is not None and ts != s) or (o is not None and to != o):
            continue
        b = _bind(binding, t.s, ts)
        b = _bind(b, t.p, tp) if b is not None else None
        b = _bind(b, t.o, to) if b is not None else None
        if b is not None:
            out.append(b)
    return out


def solutions(q: SparqlQuery, store: TripleStore) -> list[Binding]:
    """All solution mappings of the pattern and filters (before projection)."""
    rows: list[Binding] = [{}]
    for t in _plan(q.patterns):
        rows = [b for row in rows for b in _match(store, t, row)]
        if not rows:
            return []
    for f in q.filters:
        rows = [
            r for r in rows
            if isinstance(r.get(f.var), Literal) and compare(f.op, r[f.var], f.value)
        ]
    return rows


def value_key(v: Node) -> tuple:
    if isinstance(v, Literal):
        return sort_key(v)
    return (4, 0, v)


def execute_in_memory(q: SparqlQuery, store: TripleStore) -> AnswerSet:
    validate_query(q)  # ASTs built in code skip the parser's checks
    rows = solutions(q, store)
    if q.count:
        if q.distinct:
            return AnswerSet(count=len({r[q.var] for r in rows}))
        return AnswerSet(count=len({tuple(sorted(r.items(), key=lambda kv: kv[0].name)) for r in rows}))
    answers = {r[q.var] for r in rows}
    if q.order is not None:
        best: dict[Node, tuple] = {}
        for r in rows:
            k = value_key(r[q.order.var])
            a = r[q.var]
            if a not in best:
                best[a] = k
            else:
                best[a] = max(best[a], k) if q.order.descending else min(best[a], k)
        if q.limit is not None and len(best) > q.limit:
            ranked = sorted(best.values(), reverse=q.order.descending)
            cut = ranked[q.limit - 1] if q.limit > 0 else None
            if cut is None:
                return AnswerSet()
            if q.order.descending:
                answers = {a for a, k in best.items() if k >= cut}
            else:
                answers = {a for a, k in best.items() if k <= cut}
    elif q.limit is not None:
        answers = set(sorted(answers, key=node_key)[: q.limit])
    return AnswerSet(values=frozenset(answers))
