"""Ingest external retriever output, truncate to top-K, and measure recall."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

import httpx

from kbqa.errors import DuplicateQid, KBQAError, MissingGold, ParseError
from kbqa.logical_form.compile import sexpr_to_sparql
from kbqa.logical_form.elements import ElementBag
from kbqa.logical_form.sexpr import parse_sexpr
from kbqa.logical_form.sparql import parse_sparql, to_sparql
from kbqa.logical_form.terms import DEFAULT_ENTITY_PATTERN, DEFAULT_TYPE_RELATION

ASPECTS = ("paths", "relations", "classes")
UPSTREAM_K = {"paths": 20, "relations": 50, "classes": 50}

# dotted schema tokens such as ``people.person.nationality``; entity ids are filtered separately
_DOTTED_TOKEN = re.compile(r"(?<![\w.])(?:ns:)?([A-Za-z_][\w-]*(?:\.[\w-]+)+)")


@dataclass(frozen=True)
class LinkedEntity:
    mention: str
    entity_id: str
    label: str = ""

    def __post_init__(self):
        if not re.match(DEFAULT_ENTITY_PATTERN, self.entity_id):
            raise ValueError(f"not an entity id: {self.entity_id!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinkedEntity":
        eid = d.get("mid") or d.get("entity_id") or d.get("id")
        return cls(d.get("mention", d.get("label", "")), eid, d.get("label", ""))

    def to_dict(self) -> dict[str, str]:
        return {"mention": self.mention, "mid": self.entity_id, "label": self.label}


@dataclass(frozen=True)
class RetrievalResult:
    retriever_id: str
    qid: str
    paths: tuple[str, ...] | None = None
    relations: tuple[str, ...] | None = None
    classes: tuple[str, ...] | None = None
    # parallel to ``paths``: whether each path parsed under the SPARQL subset
    path_parse_ok: tuple[bool, ...] | None = None

    def aspect(self, name: str) -> tuple[str, ...] | None:
        return getattr(self, name)

    def to_dict(self) -> dict:
        out: dict = {"retriever": self.retriever_id, "qid": self.qid}
        for name in ASPECTS:
            if self.aspect(name) is not None:
                out[name] = list(self.aspect(name))
        return out


def _dedup(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(items))


def normalize_path(text: str) -> tuple[str, bool]:
    """Return a path as SPARQL text plus whether it parsed.

    s-expression paths (as emitted by some retrievers) are compiled; anything
    that fails is kept verbatim.
    """
    stripped = text.strip()
    try:
        if stripped.startswith("("):
            return to_sparql(sexpr_to_sparql(parse_sexpr(stripped))), True
        parse_sparql(stripped)
        return stripped, True
    except KBQAError:
        return stripped, False


def result_from_record(record: Mapping, retriever_id: str) -> RetrievalResult:
    qid = record.get("qid")
    if not isinstance(qid, str) or not qid:
        raise ValueError("record needs a non-empty string 'qid'")
    lists: dict = {}
    for name in ASPECTS:
        value = record.get(name)
        if value is None:
            lists[name] = None
            continue
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValueError(f"'{name}' must be a list of strings")
        lists[name] = value
    flags = None
    if lists["paths"] is not None:
        converted = [normalize_path(p) for p in lists["paths"]]
        seen: dict[str, bool] = {}
        for text, ok in converted:
            seen.setdefault(text, ok)
        lists["paths"] = tuple(seen)
        flags = tuple(seen.values())
    for name in ("relations", "classes"):
        if lists[name] is not None:
            lists[name] = _dedup(v.strip() for v in lists[name])
    return RetrievalResult(retriever_id, qid, lists["paths"], lists["relations"], lists["classes"], flags)


def load_retrieval(path: str | Path, retriever_id: str) -> dict[str, RetrievalResult]:
    """Read a JSONL retrieval file into ``{qid: RetrievalResult}``."""
    out: dict[str, RetrievalResult] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record must be an object")
                result = result_from_record(record, retriever_id)
            except (ValueError, TypeError) as exc:
                raise ParseError(lineno, str(exc), str(path)) from exc
            if result.qid in out:
                raise DuplicateQid(result.qid)
            out[result.qid] = result
    return out


def truncate_topk(r: RetrievalResult, budget: Mapping[str, int]) -> RetrievalResult:
    """Cut each present aspect to ``budget[aspect]`` (missing keys use ``UPSTREAM_K``)."""
    changes: dict = {}
    for name in ASPECTS:
        k = budget.get(name, UPSTREAM_K[name])
        if k < 0:
            raise ValueError(f"negative budget for {name}")
        items = r.aspect(name)
        if items is not None:
            changes[name] = items[:k]
            if name == "paths" and r.path_parse_ok is not None:
                changes["path_parse_ok"] = r.path_parse_ok[:k]
    return replace(r, **changes)


class HttpRetriever:
    """Adapter for a retriever service: ``POST {url}/retrieve`` with
    ``{qid, question, entities}`` returning one retrieval record."""

    def __init__(self, url: str, retriever_id: str, timeout: float = 60.0,
                 max_in_flight: int = 4, client: httpx.Client | None = None):
        self.url = url.rstrip("/") + "/retrieve"
        self.retriever_id = retriever_id
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def retrieve(self, qid: str, question: str, entities: Iterable[LinkedEntity]) -> RetrievalResult:
        body = {"qid": qid, "question": question, "entities": [e.to_dict() for e in entities]}
        with self._slots:
            resp = self._client.post(self.url, json=body)
        resp.raise_for_status()
        record = resp.json()
        record.setdefault("qid", qid)
        return result_from_record(record, self.retriever_id)


# --- recall ------------------------------------------------------------------


def retrieved_elements(r: RetrievalResult, entity_pattern: str = DEFAULT_ENTITY_PATTERN,
                       type_relation: str = DEFAULT_TYPE_RELATION) -> set[str]:
    """Schema elements mentioned anywhere in a retrieval result.

    Paths are scanned lexically, so unparseable paths still contribute.
    """
    entity_re = re.compile(entity_pattern)
    found: set[str] = set()
    for path in r.paths or ():
        for token in _DOTTED_TOKEN.findall(path):
            if not entity_re.match(token) and token != type_relation:
                found.add(token)
    found.update(r.relations or ())
    found.update(r.classes or ())
    return found


def gold_elements(bag: ElementBag) -> set[str]:
    return set(bag.relations) | set(bag.classes)


def question_recall(results: Iterable[RetrievalResult], gold: ElementBag) -> float:
    wanted = gold_elements(gold)
    if not wanted:
        return 1.0
    have: set[str] = set()
    for r in results:
        have |= retrieved_elements(r)
    return len(wanted & have) / len(wanted)


def recall_error_rate(runs: Mapping[str, list[RetrievalResult]], gold: Mapping[str, ElementBag]) -> float:
    """Percentage of gold questions whose retrieved elements miss some gold
    relation or class (entities excluded), pooling all retrievers."""
    for qid in runs:
        if qid not in gold:
            raise MissingGold(qid)
    if not gold:
        return 0.0
    misses = sum(1 for qid, bag in gold.items() if question_recall(runs.get(qid, []), bag) < 1.0)
    return 100.0 * misses / len(gold)
