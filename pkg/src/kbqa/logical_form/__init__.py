from kbqa.logical_form.compile import sexpr_to_sparql
from kbqa.logical_form.elements import ElementBag, Schema, extract_elements
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
    parse_sexpr,
    to_sexpr,
)
from kbqa.logical_form.sparql import (
    Filter,
    Iri,
    OrderBy,
    SparqlQuery,
    Triple,
    Var,
    parse_sparql,
    sanitize,
    to_endpoint_sparql,
    to_sparql,
)
from kbqa.logical_form.terms import Literal

__all__ = [
    "And", "ArgMax", "ArgMin", "Class", "Compare", "Count", "ElementBag", "Entity",
    "Filter", "Iri", "Join", "Literal", "OrderBy", "Reverse", "SExpr", "Schema",
    "SparqlQuery", "Triple", "Var", "extract_elements", "parse_sexpr", "parse_sparql",
    "sanitize", "sexpr_to_sparql", "to_endpoint_sparql", "to_sexpr", "to_sparql",
]
