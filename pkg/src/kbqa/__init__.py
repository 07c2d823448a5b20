"""Few-shot KBQA engine: retrieval fusion, LLM re-ranking, SPARQL generation
with execution-guided feedback, and evaluation."""

__version__ = "0.1.0"
