"""Terms shared by the s-expression and SPARQL representations."""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

XSD = "http://www.w3.org/2001/XMLSchema#"
FREEBASE_NS = "http://rdf.freebase.com/ns/"

DEFAULT_ENTITY_PATTERN = r"^[mg]\.[0-9a-z_]+$"
DEFAULT_TYPE_RELATION = "type.object.type"

# Dotted identifier: at least two segments, no whitespace or delimiters.
DOTTED_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_\-]*(\.[A-Za-z0-9_\-]+)+$")

NUMERIC_TYPES = frozenset(
    "xsd:" + t
    for t in (
        "integer", "int", "long", "short", "decimal", "float", "double",
        "nonNegativeInteger", "positiveInteger", "negativeInteger", "nonPositiveInteger",
    )
)
TEMPORAL_TYPES = frozenset(
    "xsd:" + t for t in ("dateTime", "date", "gYear", "gYearMonth", "time")
)


def canonical_datatype(dt: str | None) -> str | None:
    """Normalize datatype spelling: full XSD IRIs and ``<...>`` forms become ``xsd:local``."""
    if dt is None:
        return None
    dt = dt.strip()
    if dt.startswith("<") and dt.endswith(">"):
        dt = dt[1:-1]
    if dt.startswith(XSD):
        return "xsd:" + dt[len(XSD):]
    return dt


@dataclass(frozen=True)
class Literal:
    value: str
    datatype: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "datatype", canonical_datatype(self.datatype))

    @property
    def category(self) -> str:
        if self.datatype in NUMERIC_TYPES:
            return "numeric"
        if self.datatype in TEMPORAL_TYPES:
            return "temporal"
        return "string"

    def sparql(self) -> str:
        text = '"' + self.value.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return f"{text}^^{self.datatype}" if self.datatype else text

    def sexpr(self) -> str:
        dt = self.datatype
        if dt and dt.startswith("xsd:"):
            dt = XSD + dt[4:]
        if dt is None:
            return self.sparql()
        if re.fullmatch(r"[^\s()\"]+", self.value):
            return f"{self.value}^^{dt}"
        return f"{self.sparql().split('^^')[0]}^^{dt}"

    def __str__(self) -> str:
        return self.value


def _temporal_key(value: str) -> str:
    v = value.strip()
    if v.endswith("Z"):
        v = v[:-1]
    return v


def sort_key(value: Literal) -> tuple:
    """Total order used by superlatives: category first, then value within category."""
    cat = value.category
    if cat == "numeric":
        try:
            return (0, Decimal(value.value), "")
        except InvalidOperation:
            return (3, Decimal(0), value.value)
    if cat == "temporal":
        return (1, Decimal(0), _temporal_key(value.value))
    return (2, Decimal(0), value.value)


def compare(op: str, left: Literal, right: Literal) -> bool:
    """Apply ``lt``/``le``/``gt``/``ge`` to two literals; mixed categories never match."""
    if left.category != right.category:
        return False
    if left.category == "numeric":
        try:
            a, b = Decimal(left.value), Decimal(right.value)
        except InvalidOperation:
            return False
    elif left.category == "temporal":
        a, b = _temporal_key(left.value), _temporal_key(right.value)
    else:
        a, b = left.value, right.value
    if op == "lt":
        return a < b
    if op == "le":
        return a <= b
    if op == "gt":
        return a > b
    if op == "ge":
        return a >= b
    raise ValueError(f"unknown comparison {op!r}")


def strip_namespace(iri: str) -> str:
    """Map ``<http://rdf.freebase.com/ns/x.y>`` / ``ns:x.y`` / ``x.y`` to dotted ``x.y``."""
    if iri.startswith("<") and iri.endswith(">"):
        iri = iri[1:-1]
    if iri.startswith(FREEBASE_NS):
        return iri[len(FREEBASE_NS):]
    if iri.startswith("ns:"):
        return iri[3:]
    return iri

