"""Read-only client for a remote SPARQL endpoint (SPARQL 1.1 Protocol, JSON results)."""

from __future__ import annotations

import logging
import threading
from typing import Any

import httpx

from kbqa.errors import EndpointError, EndpointTimeout, QueryRejected
from kbqa.kb.store import AnswerSet, Node
from kbqa.logical_form.sparql import SparqlQuery, to_endpoint_sparql
from kbqa.logical_form.terms import Literal, strip_namespace

log = logging.getLogger(__name__)

RESULTS_JSON = "application/sparql-results+json"


def decode_binding(cell: dict[str, Any]) -> Node:
    kind = cell.get("type")
    value = cell["value"]
    if kind == "uri":
        return strip_namespace(value)
    if kind == "bnode":
        return "_:" + value
    if "xml:lang" in cell:
        return Literal(value, None)
    return Literal(value, cell.get("datatype"))


def decode_results(payload: dict[str, Any], q: SparqlQuery) -> AnswerSet:
    """Turn a SPARQL JSON results document into an ``AnswerSet`` for ``q``."""
    head_vars = payload.get("head", {}).get("vars", [])
    rows = payload.get("results", {}).get("bindings", [])
    if q.count:
        if not rows or not head_vars:
            return AnswerSet(count=0)
        cell = rows[0].get(head_vars[0])
        return AnswerSet(count=int(float(cell["value"])) if cell else 0)
    name = q.var.name if q.var.name in head_vars or not head_vars else head_vars[0]
    return AnswerSet(values=frozenset(decode_binding(r[name]) for r in rows if name in r))


class SparqlEndpoint:
    """Executes queries over HTTP.

    Transport failures, HTTP errors, server-side rejections and timeouts are
    raised as distinct exceptions; an empty result is just an empty
    ``AnswerSet``. ``max_in_flight`` bounds concurrent requests.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        max_in_flight: int = 4,
        method: str = "GET",
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.timeout = timeout
        self.method = method.upper()
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def query_text(self, q: SparqlQuery) -> str:
        return to_endpoint_sparql(q)

    def execute(self, q: SparqlQuery) -> AnswerSet:
        text = self.query_text(q)
        headers = {"Accept": RESULTS_JSON}
        with self._slots:
            try:
                if self.method == "POST":
                    resp = self._client.post(
                        self.url, data={"query": text}, headers=headers, timeout=self.timeout
                    )
                else:
                    resp = self._client.get(
                        self.url, params={"query": text}, headers=headers, timeout=self.timeout
                    )
            except httpx.TimeoutException as exc:
                raise EndpointTimeout(str(exc)) from exc
            except httpx.HTTPError as exc:
                raise EndpointError(None, str(exc)) from exc
        if resp.status_code == 400:
            raise QueryRejected(400, resp.text)
        if resp.status_code >= 300:
            raise EndpointError(resp.status_code, resp.text)
        try:
            payload = resp.json()
        except ValueError as exc:
            raise EndpointError(resp.status_code, f"invalid JSON results: {resp.text[:200]}") from exc
        return decode_results(payload, q)

    def close(self) -> None:
        self._client.close()
