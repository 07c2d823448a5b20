"""S-expression logical forms (GrailQA dialect): AST, parser and serializer.

Grammar handled here::

    expr     := ENTITY | CLASS | (AND expr expr) | (JOIN rel value)
              | (ARGMAX expr REL) | (ARGMIN expr REL) | (CMP REL LITERAL)
    root     := expr | (COUNT expr)
    rel      := REL | (R REL)
    value    := expr | LITERAL
    CMP      := lt | le | gt | ge

``COUNT`` is only allowed at the root since it yields a number, not a set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from kbqa.errors import LFSyntaxError, UnsupportedConstruct
from kbqa.logical_form.terms import DEFAULT_ENTITY_PATTERN, DOTTED_RE, Literal

COMPARATORS = ("lt", "le", "gt", "ge")
# Heads that exist in the dataset family but are deliberately not compiled.
UNSUPPORTED_HEADS = {"TC": "TC"}


@dataclass(frozen=True)
class Entity:
    id: str


@dataclass(frozen=True)
class Class:
    iri: str


@dataclass(frozen=True)
class Reverse:
    relation: str


@dataclass(frozen=True)
class And:
    left: "SExpr"
    right: "SExpr"


@dataclass(frozen=True)
class Join:
    relation: Union[str, Reverse]
    body: Union["SExpr", Literal]


@dataclass(frozen=True)
class Count:
    body: "SExpr"


@dataclass(frozen=True)
class ArgMax:
    body: "SExpr"
    relation: str


@dataclass(frozen=True)
class ArgMin:
    body: "SExpr"
    relation: str


@dataclass(frozen=True)
class Compare:
    op: str
    relation: str
    value: Literal


SExpr = Union[Entity, Class, And, Join, Count, ArgMax, ArgMin, Compare]

_TOKEN_RE = re.compile(r'\s*(?:(\()|(\))|("(?:[^"\\]|\\.)*"(?:\^\^[^\s()]+)?)|([^\s()]+))')
_NUMBER_RE = re.compile(r"^-?\d+(\.\d+)?$")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise LFSyntaxError("unexpected character", pos)
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    return tokens


def parse_literal_token(token: str) -> Literal | None:
    """Interpret a token as a literal, or return None if it is not one."""
    if token.startswith('"'):
        body, _, dt = token.partition('"^^')
        if dt:
            value = body[1:]
        else:
            if not (len(token) >= 2 and token.endswith('"')):
                return None
            value, dt = token[1:-1], None
        return Literal(value.replace('\\"', '"').replace("\\\\", "\\"), dt or None)
    if "^^" in token:
        value, _, dt = token.partition("^^")
        return Literal(value, dt)
    if _NUMBER_RE.match(token):
        return Literal(token, "xsd:decimal" if "." in token else "xsd:integer")
    return None


class _Parser:
    def __init__(self, text: str, entity_pattern: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.entity_re = re.compile(entity_pattern)

    def _peek(self) -> tuple[str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _next(self, expected: str) -> tuple[str, int]:
        tok = self._peek()
        if tok is None:
            raise LFSyntaxError("unexpected end of input", len(self.text), expected)
        self.i += 1
        return tok

    def _expect_close(self) -> None:
        tok, pos = self._next("')'")
        if tok != ")":
            raise LFSyntaxError(f"unexpected token {tok!r}", pos, "')'")

    def parse(self) -> SExpr:
        tok = self._peek()
        if tok is None:
            raise LFSyntaxError("empty logical form", 0, "expression")
        if tok[0] == "(" and self.i + 1 < len(self.tokens) and self.tokens[self.i + 1][0].upper() == "COUNT":
            self.i += 2
            expr: SExpr = Count(self._set_expr())
            self._expect_close()
        else:
            expr = self._set_expr()
        if self._peek() is not None:
            tok, pos = self._peek()
            raise LFSyntaxError(f"trailing token {tok!r}", pos, "end of input")
        return expr

    def _relation_name(self) -> str:
        tok, pos = self._next("relation")
        if tok in "()" or not DOTTED_RE.match(tok):
            raise LFSyntaxError(f"unexpected token {tok!r}", pos, "relation")
        return tok

    def _relation(self) -> str | Reverse:
        tok = self._peek()
        if tok is not None and tok[0] == "(":
            self.i += 1
            head, pos = self._next("R")
            if head.upper() != "R":
                raise LFSyntaxError(f"unexpected head {head!r}", pos, "R")
            rel = Reverse(self._relation_name())
            self._expect_close()
            return rel
        return self._relation_name()

    def _literal(self) -> Literal:
        tok, pos = self._next("literal")
        lit = parse_literal_token(tok) if tok not in "()" else None
        if lit is None:
            raise LFSyntaxError(f"unexpected token {tok!r}", pos, "literal")
        return lit

    def _atom(self, tok: str, pos: int, allow_literal: bool) -> SExpr | Literal:
        if allow_literal:
            lit = parse_literal_token(tok)
            if lit is not None:
                return lit
        if self.entity_re.match(tok):
            return Entity(tok)
        if DOTTED_RE.match(tok):
            return Class(tok)
        raise LFSyntaxError(f"unexpected token {tok!r}", pos, "set-valued expression")

    def _set_expr(self, allow_literal: bool = False) -> SExpr | Literal:
        tok, pos = self._next("expression")
        if tok == ")":
            raise LFSyntaxError("unexpected ')'", pos, "expression")
        if tok != "(":
            return self._atom(tok, pos, allow_literal)
        head, hpos = self._next("head")
        key = head.upper()
        if key in UNSUPPORTED_HEADS:
            raise UnsupportedConstruct(UNSUPPORTED_HEADS[key])
        if key == "AND":
            expr: SExpr = And(self._set_expr(), self._set_expr())
        elif key == "JOIN":
            rel = self._relation()
            expr = Join(rel, self._set_expr(allow_literal=True))
        elif key in ("ARGMAX", "ARGMIN"):
            body = self._set_expr()
            rel = self._relation_name()
            expr = ArgMax(body, rel) if key == "ARGMAX" else ArgMin(body, rel)
        elif head.lower() in COMPARATORS:
            rel = self._relation_name()
            expr = Compare(head.lower(), rel, self._literal())
        elif key == "COUNT":
            raise LFSyntaxError("COUNT is only allowed at the root", hpos, "set-valued expression")
        else:
            raise LFSyntaxError(f"unknown head {head!r}", hpos, "AND, JOIN, ARGMAX, ARGMIN or a comparator")
        self._expect_close()
        return expr


def parse_sexpr(text: str, entity_pattern: str = DEFAULT_ENTITY_PATTERN) -> SExpr:
    """Parse an s-expression into its AST.

    Raises ``LFSyntaxError`` (carrying the character position and the expected
    token) on malformed input, and ``UnsupportedConstruct`` for heads such as
    ``TC`` that are recognized but not handled.
    """
    if not text or not text.strip():
        raise LFSyntaxError("empty logical form", 0, "expression")
    return _Parser(text, entity_pattern).parse()


def _rel_text(rel: str | Reverse) -> str:
    return f"(R {rel.relation})" if isinstance(rel, Reverse) else rel


def to_sexpr(expr: SExpr | Literal) -> str:
    if isinstance(expr, Entity):
        return expr.id
    if isinstance(expr, Class):
        return expr.iri
    if isinstance(expr, Literal):
        return expr.sexpr()
    if isinstance(expr, And):
        return f"(AND {to_sexpr(expr.left)} {to_sexpr(expr.right)})"
    if isinstance(expr, Join):
        return f"(JOIN {_rel_text(expr.relation)} {to_sexpr(expr.body)})"
    if isinstance(expr, Count):
        return f"(COUNT {to_sexpr(expr.body)})"
    if isinstance(expr, ArgMax):
        return f"(ARGMAX {to_sexpr(expr.body)} {expr.relation})"
    if isinstance(expr, ArgMin):
        return f"(ARGMIN {to_sexpr(expr.body)} {expr.relation})"
    if isinstance(expr, Compare):
        return f"({expr.op} {expr.relation} {expr.value.sexpr()})"
    raise TypeError(f"not an s-expression node: {expr!r}")
