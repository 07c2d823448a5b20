"""A small SPARQL subset: basic graph patterns, comparison filters, COUNT and
ORDER BY/LIMIT superlatives, over Freebase-style ``ns:`` IRIs.

The parser is deliberately forgiving about what LLMs emit around a query
(code fences, ``SPARQL:`` labels, trailing prose) but strict about the query
itself: anything outside the subset raises ``UnsupportedConstruct``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from kbqa.errors import LFSyntaxError, UnsupportedConstruct
from kbqa.logical_form.terms import FREEBASE_NS, XSD, Literal, canonical_datatype, strip_namespace

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
DEFAULT_PREFIXES = {"ns": FREEBASE_NS, "xsd": XSD, "rdf": RDF, "rdfs": RDFS}

OPS = {"<": "lt", "<=": "le", ">": "gt", ">=": "ge"}
OP_SYMBOLS = {v: k for k, v in OPS.items()}
FLIPPED = {"lt": "gt", "le": "ge", "gt": "lt", "ge": "le"}

UNSUPPORTED_KEYWORDS = {
    "OPTIONAL", "UNION", "MINUS", "GRAPH", "SERVICE", "BIND", "VALUES", "GROUP",
    "HAVING", "OFFSET", "EXISTS", "NOT", "CONSTRUCT", "ASK", "DESCRIBE", "FROM",
    "SUM", "AVG", "MIN", "MAX", "SAMPLE", "REGEX", "LANG", "LANGMATCHES", "STR",
    "ISLITERAL", "ISIRI", "ISURI", "BOUND", "CONTAINS", "STRSTARTS", "YEAR", "NOW",
}


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


@dataclass(frozen=True)
class Iri:
    value: str

    def __str__(self) -> str:
        return f"<{self.value}>" if "://" in self.value else f"ns:{self.value}"


@dataclass(frozen=True)
class Triple:
    s: Var | Iri | Literal
    p: Var | Iri
    o: Var | Iri | Literal


@dataclass(frozen=True)
class Filter:
    op: str
    var: Var
    value: Literal


@dataclass(frozen=True)
class OrderBy:
    var: Var
    descending: bool


@dataclass(frozen=True)
class SparqlQuery:
    var: Var
    patterns: tuple[Triple, ...]
    distinct: bool = True
    count: bool = False
    filters: tuple[Filter, ...] = ()
    order: OrderBy | None = None
    limit: int | None = None

    def variables(self) -> set[Var]:
        return {t for tr in self.patterns for t in (tr.s, tr.p, tr.o) if isinstance(t, Var)}

    def __str__(self) -> str:
        return to_sparql(self)


# --- serialization -----------------------------------------------------------


def _term(t) -> str:
    if isinstance(t, Literal):
        return t.sparql()
    return str(t)


def _group(q: SparqlQuery) -> str:
    parts = [f"{_term(t.s)} {_term(t.p)} {_term(t.o)} ." for t in q.patterns]
    parts += [f"FILTER ({f.var} {OP_SYMBOLS[f.op]} {f.value.sparql()})" for f in q.filters]
    return "{ " + " ".join(parts) + " }"


def _projection(q: SparqlQuery) -> str:
    if q.count:
        inner = f"DISTINCT {q.var}" if q.distinct else str(q.var)
        return f"SELECT (COUNT({inner}) AS ?count)"
    return f"SELECT DISTINCT {q.var}" if q.distinct else f"SELECT {q.var}"


def _modifiers(q: SparqlQuery) -> str:
    out = ""
    if q.order is not None:
        out += f" ORDER BY {'DESC' if q.order.descending else 'ASC'}({q.order.var})"
    if q.limit is not None:
        out += f" LIMIT {q.limit}"
    return out


def to_sparql(q: SparqlQuery) -> str:
    """Single-line canonical text, e.g.
    ``SELECT DISTINCT ?x WHERE { ns:m.07l8x ns:sports.sports_team.founded ?x . }``."""
    return f"{_projection(q)} WHERE {_group(q)}{_modifiers(q)}"


EXTREMUM_VAR = "__extremum"


def to_endpoint_sparql(q: SparqlQuery) -> str:
    """Text sent to a remote endpoint: prefixes declared, and ``ORDER BY .. LIMIT 1``
    rewritten to a filter against the extremum so ties are all returned, matching
    the in-memory executor."""
    header = f"PREFIX ns: <{FREEBASE_NS}>\nPREFIX xsd: <{XSD}>\n"
    if q.order is None or q.limit != 1 or q.count:
        return header + to_sparql(q)
    agg = "MAX" if q.order.descending else "MIN"
    ext = Var(EXTREMUM_VAR)
    inner = replace(q, order=None, limit=None)
    body = _group(inner)[2:-1]
    # the subquery leads the group: some engines evaluate a subquery with the
    # bindings of patterns preceding it, which would make the extremum per-row
    sub = f"{{ SELECT ({agg}({q.order.var}) AS {ext}) WHERE {_group(inner)} }}"
    return header + f"{_projection(q)} WHERE {{ {sub} {body}FILTER ({q.order.var} = {ext}) }}"


# --- sanitization ------------------------------------------------------------

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.S)
_LABEL_RE = re.compile(r"^\s*(?:[*#>_ ]*)SPARQL\s*(?:query)?\s*[*_]*\s*:\s*[*_]*", re.I)
_START_RE = re.compile(r"\b(PREFIX|SELECT)\b", re.I)
_TAIL_RE = re.compile(
    r"\s*(ORDER\s+BY\s+(?:(?:ASC|DESC)\s*\(\s*[?$]\w+\s*\)|[?$]\w+)\s*)?(LIMIT\s+\d+)?", re.I
)


_MODIFIER_RE = re.compile(r"\s*(OFFSET|LIMIT|ORDER|GROUP|HAVING|VALUES)\b", re.I)


def sanitize(text: str) -> str:
    """Extract the query from raw LLM output.

    Strips markdown code fences, leading ``SPARQL:`` labels, any chatter before
    the first ``PREFIX``/``SELECT``, and anything after the final ``}`` other
    than an ``ORDER BY``/``LIMIT`` tail.
    """
    fence = _FENCE_RE.search(text)
    if fence:
        text = fence.group(1)
    text = text.strip()
    while True:
        m = _LABEL_RE.match(text)
        if not m:
            break
        text = text[m.end():].lstrip()
    start = _START_RE.search(text)
    if start:
        text = text[start.start():]
    close = text.rfind("}")
    if close >= 0:
        tail = _TAIL_RE.match(text, close + 1)
        rest = text[tail.end():]
        if _MODIFIER_RE.match(rest):
            # further solution modifiers belong to the query; keep them so the
            # parser can reject them instead of silently changing the meaning
            return text.strip()
        kept = [g.strip() for g in tail.groups() if g]
        text = text[: close + 1] + (" " + " ".join(kept) if kept else "")
    return text.strip()


# --- lexer -------------------------------------------------------------------

_LEX_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<iri><[^<>"\s{}|^`\\?&=]*>)
  | (?P<var>[?$][A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<number>[+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<pname>[A-Za-z][\w\-]*:(?:[\w\-]+(?:\.[\w\-]+)*)?|:(?:[\w\-]+(?:\.[\w\-]+)*))
  | (?P<op><=|>=|!=|&&|\|\||\^\^|[<>=!{}().;,*@])
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.X,
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _lex(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _LEX_RE.match(text, pos)
        if m is None:
            raise LFSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    return toks


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), s)


@dataclass
class _State:
    prefixes: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PREFIXES))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _lex(text)
        self.i = 0
        self.state = _State()

    # token helpers
    def peek(self, offset: int = 0) -> _Tok | None:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def at_word(self, *words: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == "word" and t.text.upper() in words

    def at_op(self, *ops: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == "op" and t.text in ops

    def next(self, expected: str) -> _Tok:
        t = self.peek()
        if t is None:
            raise LFSyntaxError("unexpected end of query", len(self.text), expected)
        self.i += 1
        return t

    def expect_op(self, op: str) -> _Tok:
        t = self.next(repr(op))
        if t.kind != "op" or t.text != op:
            self._fail(t, repr(op))
        return t

    def expect_word(self, word: str) -> _Tok:
        t = self.next(word)
        if t.kind != "word" or t.text.upper() != word:
            self._fail(t, word)
        return t

    def _fail(self, t: _Tok, expected: str):
        if t.kind == "word" and t.text.upper() in UNSUPPORTED_KEYWORDS:
            raise UnsupportedConstruct(t.text.upper())
        raise LFSyntaxError(f"unexpected token {t.text!r}", t.pos, expected)

    # grammar
    def parse(self) -> SparqlQuery:
        while self.at_word("PREFIX", "BASE"):
            self._prefix()
        t = self.peek()
        if t is None or not self.at_word("SELECT"):
            if t is not None:
                self._fail(t, "SELECT")
            raise LFSyntaxError("empty query", 0, "SELECT")
        self.i += 1
        var, distinct, count = self._projection()
        if self.at_word("FROM"):
            raise UnsupportedConstruct("FROM")
        if self.at_word("WHERE"):
            self.i += 1
        patterns, filters = self._group()
        order, limit = self._modifiers()
        t = self.peek()
        if t is not None:
            self._fail(t, "end of query")
        q = SparqlQuery(var, tuple(patterns), distinct, count, tuple(filters), order, limit)
        validate_query(q)
        return q

    def _prefix(self) -> None:
        kw = self.next("PREFIX")
        if kw.text.upper() == "BASE":
            raise UnsupportedConstruct("BASE")
        name = self.next("prefix name")
        if name.kind != "pname" or not name.text.endswith(":"):
            self._fail(name, "prefix name")
        iri = self.next("IRI")
        if iri.kind != "iri":
            self._fail(iri, "IRI")
        self.state.prefixes[name.text[:-1]] = iri.text[1:-1]

    def _projection(self) -> tuple[Var, bool, bool]:
        distinct = False
        if self.at_word("DISTINCT", "REDUCED"):
            distinct = self.next("DISTINCT").text.upper() == "DISTINCT"
        if self.at_op("*"):
            raise UnsupportedConstruct("SELECT *")
        if self.at_op("(") or self.at_word("COUNT"):
            wrapped = self.at_op("(")
            if wrapped:
                self.i += 1
            if not self.at_word("COUNT"):
                t = self.next("COUNT")
                self._fail(t, "COUNT")
            self.i += 1
            self.expect_op("(")
            inner_distinct = False
            if self.at_word("DISTINCT"):
                self.i += 1
                inner_distinct = True
            if self.at_op("*"):
                raise UnsupportedConstruct("COUNT(*)")
            var = self._var()
            self.expect_op(")")
            if self.at_word("AS"):
                self.i += 1
                self._var()
            if wrapped:
                self.expect_op(")")
            self._single_projection()
            return var, inner_distinct, True
        var = self._var()
        self._single_projection()
        return var, distinct, False

    def _single_projection(self) -> None:
        t = self.peek()
        if t is not None and (t.kind == "var" or (t.kind == "op" and t.text == "(")):
            raise UnsupportedConstruct("multiple projection variables")

    def _var(self) -> Var:
        t = self.next("variable")
        if t.kind != "var":
            self._fail(t, "variable")
        return Var(t.text[1:])

    def _group(self) -> tuple[list[Triple], list[Filter]]:
        self.expect_op("{")
        patterns: list[Triple] = []
        filters: list[Filter] = []
        while True:
            t = self.peek()
            if t is None:
                raise LFSyntaxError("unterminated group", len(self.text), "'}'")
            if t.kind == "op" and t.text == "}":
                self.i += 1
                break
            if t.kind == "op" and t.text == "{":
                raise UnsupportedConstruct("nested group")
            if t.kind == "op" and t.text == ".":
                self.i += 1
                continue
            if self.at_word("FILTER"):
                self.i += 1
                filters.extend(self._filter())
                continue
            if self.at_word("SELECT"):
                raise UnsupportedConstruct("subquery")
            if t.kind == "word" and t.text.upper() in UNSUPPORTED_KEYWORDS:
                raise UnsupportedConstruct(t.text.upper())
            patterns.extend(self._triples_same_subject())
        return patterns, filters

    def _triples_same_subject(self) -> list[Triple]:
        subject = self._term("subject")
        out = []
        while True:
            pred = self._predicate()
            while True:
                out.append(Triple(subject, pred, self._term("object")))
                if self.at_op(","):
                    self.i += 1
                    continue
                break
            if self.at_op(";"):
                self.i += 1
                if self.at_op(".", "}") or self.at_word("FILTER"):
                    break
                continue
            break
        return out

    def _predicate(self):
        t = self.peek()
        if t is not None and t.kind == "word" and t.text == "a":
            self.i += 1
            return Iri(RDF + "type")
        term = self._term("predicate")
        if isinstance(term, Literal):
            raise LFSyntaxError("literal in predicate position", t.pos if t else None, "IRI or variable")
        return term

    def _iri(self, t: _Tok) -> Iri:
        if t.kind == "iri":
            return Iri(strip_namespace(t.text))
        prefix, _, local = t.text.partition(":")
        if prefix not in self.state.prefixes:
            raise LFSyntaxError(f"undeclared prefix {prefix!r}", t.pos, "declared prefix")
        return Iri(strip_namespace(self.state.prefixes[prefix] + local))

    def _term(self, role: str):
        t = self.next(role)
        if t.kind == "var":
            return Var(t.text[1:])
        if t.kind in ("iri", "pname"):
            return self._iri(t)
        if t.kind in ("string", "number"):
            return self._literal(t)
        self._fail(t, role)

    def _literal(self, t: _Tok) -> Literal:
        if t.kind == "number":
            text = t.text.lstrip("+")
            if re.search(r"[eE]", text):
                dt = "xsd:double"
            elif "." in text:
                dt = "xsd:decimal"
            else:
                dt = "xsd:integer"
            return Literal(text, dt)
        value = _unescape(t.text[1:-1])
        if self.at_op("^^"):
            self.i += 1
            dt_tok = self.next("datatype")
            if dt_tok.kind == "iri":
                dt = canonical_datatype(dt_tok.text)
            elif dt_tok.kind == "pname":
                prefix, _, local = dt_tok.text.partition(":")
                base = self.state.prefixes.get(prefix)
                dt = canonical_datatype(base + local) if base else dt_tok.text
            else:
                self._fail(dt_tok, "datatype")
            return Literal(value, dt)
        if self.at_op("@"):
            raise UnsupportedConstruct("language-tagged literal")
        return Literal(value, None)

    def _filter(self) -> list[Filter]:
        t = self.peek()
        if t is not None and t.kind == "word":
            raise UnsupportedConstruct(t.text.upper())
        self.expect_op("(")
        out = [self._comparison()]
        while self.at_op("&&"):
            self.i += 1
            out.append(self._comparison())
        if self.at_op("||"):
            raise UnsupportedConstruct("disjunctive FILTER")
        self.expect_op(")")
        return out

    def _comparison(self) -> Filter:
        if self.at_op("("):
            self.i += 1
            f = self._comparison()
            self.expect_op(")")
            return f
        left = self._operand()
        op_tok = self.next("comparison operator")
        if op_tok.kind != "op" or op_tok.text not in OPS:
            if op_tok.kind == "op" and op_tok.text in ("=", "!="):
                raise UnsupportedConstruct(f"FILTER {op_tok.text}")
            self._fail(op_tok, "comparison operator")
        right = self._operand()
        op = OPS[op_tok.text]
        if isinstance(left, Var) and isinstance(right, Literal):
            return Filter(op, left, right)
        if isinstance(left, Literal) and isinstance(right, Var):
            return Filter(FLIPPED[op], right, left)
        raise UnsupportedConstruct("FILTER comparison must relate a variable to a literal")

    def _operand(self):
        t = self.peek()
        if t is not None and t.kind == "word":
            raise UnsupportedConstruct(t.text.upper())
        if t is not None and t.kind == "op" and t.text == "!":
            raise UnsupportedConstruct("FILTER negation")
        return self._term("filter operand")

    def _modifiers(self) -> tuple[OrderBy | None, int | None]:
        order = None
        limit = None
        if self.at_word("GROUP", "HAVING"):
            raise UnsupportedConstruct(self.peek().text.upper())
        if self.at_word("ORDER"):
            self.i += 1
            self.expect_word("BY")
            if self.at_word("ASC", "DESC"):
                desc = self.next("ASC/DESC").text.upper() == "DESC"
                self.expect_op("(")
                var = self._var()
                self.expect_op(")")
            else:
                desc = False
                var = self._var()
            t = self.peek()
            if t is not None and (t.kind == "var" or self.at_word("ASC", "DESC")):
                raise UnsupportedConstruct("multi-key ORDER BY")
            order = OrderBy(var, desc)
        if self.at_word("LIMIT"):
            self.i += 1
            t = self.next("integer")
            if t.kind != "number" or not t.text.isdigit():
                self._fail(t, "integer")
            limit = int(t.text)
        if self.at_word("OFFSET"):
            raise UnsupportedConstruct("OFFSET")
        return order, limit


def validate_query(q: SparqlQuery) -> None:
    """Structural checks shared by the parser and the executor."""
    if not q.patterns:
        raise LFSyntaxError("empty graph pattern", None, "at least one triple pattern")
    seen = q.variables()
    if q.var not in seen:
        raise LFSyntaxError(f"projected variable {q.var} does not occur in the pattern")
    for f in q.filters:
        if f.var not in seen:
            raise LFSyntaxError(f"filter variable {f.var} does not occur in the pattern")
    if q.order is not None and q.order.var not in seen:
        raise LFSyntaxError(f"ORDER BY variable {q.order.var} does not occur in the pattern")


def parse_sparql(text: str) -> SparqlQuery:
    """Parse a query in the supported subset, after ``sanitize``."""
    if not text or not text.strip():
        raise LFSyntaxError("empty query", 0, "SELECT")
    return _Parser(sanitize(text)).parse()
