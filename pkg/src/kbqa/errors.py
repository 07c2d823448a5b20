"""Exception hierarchy shared across the package."""

from __future__ import annotations


class KBQAError(Exception):
    """Base class for every error raised by this package."""


# --- logical forms -----------------------------------------------------------


class LFSyntaxError(KBQAError):
    """Malformed s-expression or SPARQL text."""

    def __init__(self, message: str, position: int | None = None, expected: str | None = None):
        self.position = position
        self.expected = expected
        where = f" at position {position}" if position is not None else ""
        want = f" (expected {expected})" if expected else ""
        super().__init__(f"{message}{where}{want}")


class UnsupportedConstruct(KBQAError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unsupported construct: {name}")


class CompileError(KBQAError):
    pass


class UnknownIri(KBQAError):
    def __init__(self, iri: str):
        self.iri = iri
        super().__init__(f"IRI not in schema: {iri}")


class SchemaError(KBQAError):
    pass


# --- knowledge base ----------------------------------------------------------


class ParseError(KBQAError):
    """Line-oriented input file could not be parsed."""

    def __init__(self, line: int, message: str = "", path: str | None = None):
        self.line = line
        self.path = path
        prefix = f"{path}:" if path else "line "
        super().__init__(f"{prefix}{line}: {message}" if message else f"{prefix}{line}")


class EndpointError(KBQAError):
    def __init__(self, status: int | None, body: str):
        self.status = status
        self.body = body
        super().__init__(f"SPARQL endpoint error (status={status}): {body[:200]}")


class QueryRejected(EndpointError):
    pass


class EndpointTimeout(EndpointError):
    def __init__(self, body: str = "timed out"):
        super().__init__(None, body)


# --- retrieval ---------------------------------------------------------------


class DuplicateQid(KBQAError):
    def __init__(self, qid: str):
        self.qid = qid
        super().__init__(f"duplicate qid: {qid}")


class MissingGold(KBQAError):
    def __init__(self, qid: str):
        self.qid = qid
        super().__init__(f"no gold elements for qid: {qid}")


# --- rerank / generation -----------------------------------------------------


class EmptySelection(KBQAError):
    pass


class EmptyPool(KBQAError):
    pass


class BudgetExceeded(KBQAError):
    def __init__(self, tokens: int, ceiling: int):
        self.tokens = tokens
        self.ceiling = ceiling
        super().__init__(f"prompt needs ~{tokens} tokens, ceiling is {ceiling}")


class GenerationUnparseable(KBQAError):
    def __init__(self, raw: str, reason: str = ""):
        self.raw = raw
        self.reason = reason
        super().__init__(f"could not parse SPARQL from LLM output: {reason}")


# --- llm ---------------------------------------------------------------------


class LLMError(KBQAError):
    pass


class TransportError(LLMError):
    pass


class AuthError(LLMError):
    pass


class ContextLengthExceeded(LLMError):
    pass


class ScriptMiss(LLMError):
    def __init__(self, prompt: str, saved_to: str | None = None):
        self.prompt = prompt
        self.saved_to = saved_to
        hint = f" (prompt saved to {saved_to})" if saved_to else ""
        super().__init__(f"no script rule matched the prompt{hint}: {prompt[:120]!r}")


class ScriptParseError(LLMError):
    pass


# --- eval / pipeline ---------------------------------------------------------


class NotNormalized(KBQAError):
    pass


class MissingGoldForm(KBQAError):
    def __init__(self, qid: str):
        self.qid = qid
        super().__init__(f"question {qid} has no gold logical form")


class ConfigError(KBQAError):
    pass
