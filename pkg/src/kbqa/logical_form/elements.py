"""Decompose a SPARQL query into the multiset of KB elements it mentions."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from kbqa.errors import SchemaError, UnknownIri
from kbqa.logical_form.sparql import Iri, SparqlQuery, Var
from kbqa.logical_form.terms import DEFAULT_ENTITY_PATTERN, DEFAULT_TYPE_RELATION, Literal

FUNCTION_TAGS = ("COUNT", "ARGMAX", "ARGMIN", "LT", "LE", "GT", "GE")


@dataclass(frozen=True)
class Schema:
    classes: frozenset[str]
    relations: frozenset[str]
    entity_pattern: str = DEFAULT_ENTITY_PATTERN
    type_relation: str = DEFAULT_TYPE_RELATION

    def __post_init__(self):
        classes = frozenset(self.classes) - {self.type_relation}
        relations = frozenset(self.relations) - {self.type_relation}
        overlap = classes & relations
        if overlap:
            raise SchemaError(f"IRIs listed as both class and relation: {sorted(overlap)[:5]}")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "relations", relations)
        object.__setattr__(self, "_entity_re", re.compile(self.entity_pattern))

    def is_entity(self, iri: str) -> bool:
        return self._entity_re.match(iri) is not None

    @classmethod
    def load(
        cls,
        classes_path: str | Path,
        relations_path: str | Path,
        entity_pattern: str = DEFAULT_ENTITY_PATTERN,
        type_relation: str = DEFAULT_TYPE_RELATION,
    ) -> "Schema":
        """Read the two newline-delimited manifests (``classes.txt``, ``relations.txt``)."""
        return cls(
            _read_lines(classes_path),
            _read_lines(relations_path),
            entity_pattern,
            type_relation,
        )

    @classmethod
    def infer(
        cls,
        queries: list[SparqlQuery],
        entity_pattern: str = DEFAULT_ENTITY_PATTERN,
        type_relation: str = DEFAULT_TYPE_RELATION,
    ) -> "Schema":
        """Structural fallback when no ontology files are available: predicates are
        relations, objects of the type-check relation are classes."""
        classes, relations = set(), set()
        for q in queries:
            for t in q.patterns:
                if isinstance(t.p, Iri):
                    if t.p.value == type_relation:
                        if isinstance(t.o, Iri):
                            classes.add(t.o.value)
                    else:
                        relations.add(t.p.value)
        return cls(frozenset(classes), frozenset(relations - classes), entity_pattern, type_relation)


def _read_lines(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(
            line.strip() for line in fh if line.strip() and not line.lstrip().startswith("#")
        )


@dataclass(frozen=True)
class ElementBag:
    classes: Counter = field(default_factory=Counter)
    relations: Counter = field(default_factory=Counter)
    entities: Counter = field(default_factory=Counter)
    literals: Counter = field(default_factory=Counter)
    functions: Counter = field(default_factory=Counter)

    def total(self) -> int:
        return sum(sum(c.values()) for c in self._parts())

    def _parts(self):
        return (self.classes, self.relations, self.entities, self.literals, self.functions)

    def element_set(self, include_literals: bool = True) -> frozenset[tuple[str, str]]:
        names = ("class", "relation", "entity", "literal", "function")
        return frozenset(
            (name, key)
            for name, part in zip(names, self._parts())
            if include_literals or name != "literal"
            for key in part
        )

    def to_dict(self) -> dict[str, dict[str, int]]:
        names = ("classes", "relations", "entities", "literals", "functions")
        return {name: dict(sorted(part.items())) for name, part in zip(names, self._parts())}


def literal_key(lit: Literal) -> str:
    return lit.sparql()


def extract_elements(q: SparqlQuery, schema: Schema) -> ElementBag:
    """Classify every IRI, literal and function construct in ``q``.

    Relations are recorded without direction. The type-check relation itself
    is not recorded; its objects go to the class multiset. Raises
    ``UnknownIri`` for IRIs the schema cannot place.
    """
    bag = ElementBag()

    def place(term, position: str) -> None:
        if isinstance(term, Var):
            return
        if isinstance(term, Literal):
            bag.literals[literal_key(term)] += 1
            return
        iri = term.value
        if position == "predicate":
            if iri in schema.relations:
                bag.relations[iri] += 1
                return
            raise UnknownIri(iri)
        if schema.is_entity(iri):
            bag.entities[iri] += 1
        elif iri in schema.classes:
            bag.classes[iri] += 1
        elif iri in schema.relations:
            bag.relations[iri] += 1
        else:
            raise UnknownIri(iri)

    for t in q.patterns:
        if isinstance(t.p, Iri) and t.p.value == schema.type_relation:
            place(t.s, "node")
            if isinstance(t.o, Iri):
                bag.classes[t.o.value] += 1
            else:
                place(t.o, "node")
            continue
        place(t.s, "node")
        place(t.p, "predicate")
        place(t.o, "node")
    for f in q.filters:
        bag.functions[f.op.upper()] += 1
        bag.literals[literal_key(f.value)] += 1
    if q.count:
        bag.functions["COUNT"] += 1
    if q.order is not None:
        bag.functions["ARGMAX" if q.order.descending else "ARGMIN"] += 1
    return bag
