from kbqa.kb.endpoint import SparqlEndpoint, decode_results
from kbqa.kb.execute import execute_in_memory
from kbqa.kb.oracle import eval_sexpr
from kbqa.kb.store import AnswerSet, TripleStore, load_triples


def execute(q, backend) -> AnswerSet:
    """Run ``q`` on an in-memory ``TripleStore`` or a ``SparqlEndpoint``."""
    return backend.execute(q)


__all__ = [
    "AnswerSet", "SparqlEndpoint", "TripleStore", "decode_results", "eval_sexpr",
    "execute", "execute_in_memory", "load_triples",
]
