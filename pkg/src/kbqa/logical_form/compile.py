"""Compile s-expressions to the SPARQL subset.

Scheme:

* the answer variable is always ``?x``; intermediate variables are ``?y0``,
  ``?y1``, ... allocated in pre-order, left to right;
* relation triples are emitted in tree order, type-check triples after them;
* ``COUNT`` sets the aggregate projection, ``ARGMAX``/``ARGMIN`` become
  ``ORDER BY DESC/ASC(?v) LIMIT 1`` and comparatives become filters.

``COUNT``, ``ARGMAX`` and ``ARGMIN`` have query-level effect, so they must be
the outermost construct (``COUNT`` may wrap a superlative-free body).
Entities and literals may only appear as the object of a ``JOIN``.
"""

from __future__ import annotations

from kbqa.errors import CompileError
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
    SExpr,
)
from kbqa.logical_form.sparql import Filter, Iri, OrderBy, SparqlQuery, Triple, Var
from kbqa.logical_form.terms import DEFAULT_TYPE_RELATION, Literal

ANSWER_VAR = Var("x")


class _Compiler:
    def __init__(self, type_relation: str):
        self.type_relation = Iri(type_relation)
        self.counter = 0
        self.relation_triples: list[Triple] = []
        self.type_triples: list[Triple] = []
        self.filters: list[Filter] = []

    def fresh(self) -> Var:
        v = Var(f"y{self.counter}")
        self.counter += 1
        return v

    def emit(self, expr: SExpr, target: Var) -> None:
        if isinstance(expr, Class):
            self.type_triples.append(Triple(target, self.type_relation, Iri(expr.iri)))
        elif isinstance(expr, And):
            self.emit(expr.left, target)
            self.emit(expr.right, target)
        elif isinstance(expr, Join):
            body = expr.body
            if isinstance(body, Entity):
                other = Iri(body.id)
            elif isinstance(body, Literal):
                other = body
            else:
                other = self.fresh()
            if isinstance(expr.relation, Reverse):
                self.relation_triples.append(Triple(other, Iri(expr.relation.relation), target))
            else:
                self.relation_triples.append(Triple(target, Iri(expr.relation), other))
            if isinstance(other, Var):
                self.emit(body, other)
        elif isinstance(expr, Compare):
            v = self.fresh()
            self.relation_triples.append(Triple(target, Iri(expr.relation), v))
            self.filters.append(Filter(expr.op, v, expr.value))
        elif isinstance(expr, Entity):
            raise CompileError(f"entity {expr.id} can only appear as the object of a JOIN")
        elif isinstance(expr, Literal):
            raise CompileError(f"literal {expr.value!r} can only appear as the object of a JOIN")
        elif isinstance(expr, (Count, ArgMax, ArgMin)):
            raise CompileError(f"{type(expr).__name__.upper()} must be the outermost construct")
        else:
            raise CompileError(f"malformed expression: {expr!r}")

    def patterns(self) -> tuple[Triple, ...]:
        return tuple(self.relation_triples + self.type_triples)


def sexpr_to_sparql(expr: SExpr, type_relation: str = DEFAULT_TYPE_RELATION) -> SparqlQuery:
    """Compile an s-expression AST into a ``SparqlQuery``.

    >>> from kbqa.logical_form.sexpr import parse_sexpr
    >>> str(sexpr_to_sparql(parse_sexpr("(JOIN (R sports.sports_team.founded) m.07l8x)")))
    'SELECT DISTINCT ?x WHERE { ns:m.07l8x ns:sports.sports_team.founded ?x . }'
    """
    c = _Compiler(type_relation)
    count = isinstance(expr, Count)
    body = expr.body if count else expr
    order = None
    limit = None
    if isinstance(body, (ArgMax, ArgMin)):
        if count:
            raise CompileError("COUNT over a superlative is not supported")
        c.emit(body.body, ANSWER_VAR)
        value = c.fresh()
        c.relation_triples.append(Triple(ANSWER_VAR, Iri(body.relation), value))
        order = OrderBy(value, descending=isinstance(body, ArgMax))
        limit = 1
    else:
        c.emit(body, ANSWER_VAR)
    patterns = c.patterns()
    if not patterns:
        raise CompileError("expression produces no graph pattern")
    if ANSWER_VAR not in {t for tr in patterns for t in (tr.s, tr.o)}:
        raise CompileError("answer variable is unbound")
    return SparqlQuery(
        var=ANSWER_VAR,
        patterns=patterns,
        distinct=True,
        count=count,
        filters=tuple(c.filters),
        order=order,
        limit=limit,
    )
