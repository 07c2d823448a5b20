"""In-memory triple store and answer sets."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

from kbqa.errors import ParseError
from kbqa.logical_form.sexpr import parse_literal_token
from kbqa.logical_form.terms import Literal, strip_namespace

Node = Union[str, Literal]
TripleT = tuple[Node, str, Node]


class TripleStore:
    """Immutable set of triples with subject/predicate/object indexes.

    IRIs and entity ids are plain dotted strings; literals are ``Literal``.
    Literal subjects are allowed, so a store can carry type triples for
    literal values (``"1961"^^xsd:dateTime type.object.type type.datetime``).
    """

    def __init__(self, triples: Iterable[TripleT] = ()):
        self._triples = frozenset(triples)
        sp: dict[tuple[Node, str], set[Node]] = defaultdict(set)
        po: dict[tuple[str, Node], set[Node]] = defaultdict(set)
        by_p: dict[str, list[tuple[Node, Node]]] = defaultdict(list)
        for s, p, o in sorted(self._triples, key=_triple_sort_key):
            sp[(s, p)].add(o)
            po[(p, o)].add(s)
            by_p[p].append((s, o))
        self._sp = {k: frozenset(v) for k, v in sp.items()}
        self._po = {k: frozenset(v) for k, v in po.items()}
        self._by_p = {k: tuple(v) for k, v in by_p.items()}

    @property
    def triples(self) -> frozenset[TripleT]:
        return self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: TripleT) -> bool:
        return triple in self._triples

    def __iter__(self):
        return iter(sorted(self._triples, key=_triple_sort_key))

    def objects(self, s: Node, p: str) -> frozenset[Node]:
        return self._sp.get((s, p), frozenset())

    def subjects(self, p: str, o: Node) -> frozenset[Node]:
        return self._po.get((p, o), frozenset())

    def pairs(self, p: str) -> tuple[tuple[Node, Node], ...]:
        return self._by_p.get(p, ())

    def predicates(self) -> list[str]:
        return sorted(self._by_p)

    def with_triples(self, extra: Iterable[TripleT]) -> "TripleStore":
        return TripleStore(self._triples | frozenset(extra))

    def execute(self, q):
        from kbqa.kb.execute import execute_in_memory

        return execute_in_memory(q, self)


def node_key(n: Node) -> tuple:
    if isinstance(n, Literal):
        return (1, n.value, n.datatype or "")
    return (0, n, "")


def _triple_sort_key(t: TripleT) -> tuple:
    return (node_key(t[0]), t[1], node_key(t[2]))


def node_text(n: Node) -> str:
    """Normalized string form used to compare answers with gold answers."""
    return n.value if isinstance(n, Literal) else n


@dataclass(frozen=True)
class AnswerSet:
    values: frozenset = frozenset()
    count: int | None = None

    @property
    def is_count(self) -> bool:
        return self.count is not None

    def is_empty(self) -> bool:
        # A count of zero is a value, not an empty answer.
        return self.count is None and not self.values

    def normalized(self) -> frozenset[str]:
        if self.count is not None:
            return frozenset({str(self.count)})
        return frozenset(node_text(v) for v in self.values)

    def to_json(self) -> list[str]:
        return sorted(self.normalized())

    def __len__(self) -> int:
        return 1 if self.count is not None else len(self.values)


# --- loading -----------------------------------------------------------------

_FIELD_RE = re.compile(r'"(?:[^"\\]|\\.)*"(?:\^\^\S+)?|\S+')


def parse_node(token: str) -> Node:
    lit = parse_literal_token(token)
    if lit is not None:
        return lit
    return strip_namespace(token)


def load_triples(path: str | Path) -> TripleStore:
    """Load a triple file.

    One triple per line: ``subject predicate object [datatype]``, fields split on
    tabs when present, otherwise on whitespace (quoted literals may contain
    spaces). Terms may be bare dotted ids, ``ns:`` names or ``<...>`` IRIs;
    objects may be literals (``"1961"^^xsd:dateTime``, bare numbers). A fourth
    field types the object as a literal. A trailing ``.`` is ignored, as are
    blank lines and ``#`` comments.
    """
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.endswith(" .") or line.endswith("\t."):
                line = line[:-2].rstrip()
            fields = line.split("\t") if "\t" in line else _FIELD_RE.findall(line)
            fields = [f.strip() for f in fields if f.strip()]
            if len(fields) not in (3, 4):
                raise ParseError(lineno, f"expected 3 or 4 fields, got {len(fields)}", str(path))
            s_tok, p_tok, o_tok = fields[:3]
            if parse_literal_token(p_tok) is not None or p_tok.startswith('"'):
                raise ParseError(lineno, "predicate must be an IRI", str(path))
            if len(fields) == 4:
                value = o_tok[1:-1] if len(o_tok) >= 2 and o_tok[0] == o_tok[-1] == '"' else o_tok
                obj: Node = Literal(value, fields[3])
            else:
                if o_tok.startswith('"') and parse_literal_token(o_tok) is None:
                    raise ParseError(lineno, f"malformed literal {o_tok!r}", str(path))
                obj = parse_node(o_tok)
            if s_tok.startswith('"') and parse_literal_token(s_tok) is None:
                raise ParseError(lineno, f"malformed literal {s_tok!r}", str(path))
            triples.append((parse_node(s_tok), strip_namespace(p_tok), obj))
    return TripleStore(triples)


def dump_triples(store: TripleStore) -> str:
    lines = []
    for s, p, o in store:
        cols = [s.sparql() if isinstance(s, Literal) else s, p]
        cols.append(o.sparql() if isinstance(o, Literal) else o)
        lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"
