"""Per-question orchestration: re-rank, generate, refine, evaluate; resumable."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from kbqa.config import STAGES, RunConfig
from kbqa.dataset import Question, load_dataset
from kbqa.egf import EgfTrace, run_egf
from kbqa.errors import ConfigError, KBQAError, LLMError
from kbqa.generate import (
    AspectBudget,
    Exemplar,
    PromptTemplate,
    fit_generation_prompt,
    load_exemplars,
    merge_budgets,
    read_generation,
    select_exemplars,
)
from kbqa.kb.endpoint import SparqlEndpoint
from kbqa.kb.store import AnswerSet, load_triples
from kbqa.llm import CachedClient, CompletionRequest, LLMClient, OpenAIChatClient, mock_from_script
from kbqa.logical_form.elements import Schema, extract_elements
from kbqa.logical_form.sparql import parse_sparql
from kbqa.metrics import NO_DECISION, answer_f1, em_classify
from kbqa.rerank import RerankRequest, rerank_aspect
from kbqa.retrieval import (
    ASPECTS,
    HttpRetriever,
    RetrievalResult,
    load_retrieval,
    question_recall,
    truncate_topk,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
SUMMARY = "summary.json"
REVIEW = "review.jsonl"
TIMINGS = "timings.jsonl"


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Services:
    llm: LLMClient
    backend: Any
    schema: Schema | None
    retrieval: dict[str, dict[str, RetrievalResult]]
    http_retrievers: dict[str, HttpRetriever]
    exemplars: list[Exemplar]
    budget: AspectBudget
    template: PromptTemplate


def build_llm(cfg: RunConfig) -> LLMClient:
    s = cfg.llm
    if s.backend == "script":
        client: LLMClient = mock_from_script(s.script, Path(cfg.output_dir) / "script_misses")
    else:
        client = OpenAIChatClient(s.base_url, s.api_key_env, s.timeout, s.max_retries,
                                  max_in_flight=s.max_in_flight)
    if s.cache:
        client = CachedClient(client, s.cache_dir or Path(cfg.output_dir) / "llm_cache")
    return client


def build_backend(cfg: RunConfig):
    if cfg.kb.triples:
        return load_triples(cfg.kb.triples)
    return SparqlEndpoint(cfg.kb.endpoint, cfg.kb.timeout, cfg.kb.max_in_flight)


def build_services(cfg: RunConfig, llm: LLMClient | None = None, backend=None) -> Services:
    cfg.validate()
    retrieval = {r.id: load_retrieval(r.file, r.id) for r in cfg.retrievers if r.file}
    http = {r.id: HttpRetriever(r.url, r.id) for r in cfg.retrievers if r.url}
    schema = None
    if cfg.schema_classes:
        schema = Schema.load(cfg.schema_classes, cfg.schema_relations)
    if cfg.budgets:
        budget = AspectBudget(cfg.budgets["paths"], cfg.budgets["relations"], cfg.budgets["classes"], cfg.shots)
    else:
        budget = merge_budgets(len(cfg.retrievers), cfg.shots)
    pool_path = cfg.source_pool if cfg.zero_shot else cfg.exemplar_pool
    pool = load_exemplars(pool_path) if pool_path else []
    exemplars = select_exemplars(pool, cfg.shots, cfg.seed)
    return Services(
        llm=llm or build_llm(cfg),
        backend=backend if backend is not None else build_backend(cfg),
        schema=schema,
        retrieval=retrieval,
        http_retrievers=http,
        exemplars=exemplars,
        budget=budget,
        template=PromptTemplate.named(cfg.prompt_template),
    )


def _fetch(cfg: RunConfig, svc: Services, q: Question) -> list[RetrievalResult]:
    out = []
    for spec in cfg.retrievers:
        if spec.id in svc.http_retrievers:
            r = svc.http_retrievers[spec.id].retrieve(q.qid, q.question, q.entities)
        else:
            r = svc.retrieval[spec.id].get(q.qid, RetrievalResult(spec.id, q.qid))
        out.append(truncate_topk(r, cfg.upstream_k))
    return out


def _gold_answers(q: Question, backend) -> AnswerSet | None:
    gold = q.gold_answer_set()
    if gold is None and q.has_gold_form():
        gold = backend.execute(q.gold_query())
    return gold


def process_question(cfg: RunConfig, svc: Services, q: Question, stage: str = "all") -> dict:
    record: dict[str, Any] = {"qid": q.qid, "question": q.question, "status": "ok", "error": None}
    calls = {"rerank": 0, "generation": 0, "feedback": 0}
    record["api_calls"] = calls
    caps = svc.budget.as_mapping()

    retrieved = _fetch(cfg, svc, q)
    reranked: list[RetrievalResult] = []
    rerank_log = []
    for r in retrieved:
        ranked: dict[str, tuple[str, ...] | None] = {}
        for aspect in ASPECTS:
            items = r.aspect(aspect)
            if not items:
                ranked[aspect] = items
                continue
            req = RerankRequest(aspect, q.question, q.entities, items, caps[aspect])
            calls["rerank"] += 1
            out = rerank_aspect(svc.llm, req, cfg.llm.model, cfg.llm.temperature,
                                request_id=f"{q.qid}:{r.retriever_id}:{aspect}")
            ranked[aspect] = out.ranked
            rerank_log.append({"retriever": r.retriever_id, "aspect": aspect, "prompt": out.prompt,
                               "raw": out.raw, "ranked": list(out.ranked)})
        reranked.append(replace(r, paths=ranked["paths"], relations=ranked["relations"],
                                classes=ranked["classes"], path_parse_ok=None))
    record["rerank"] = rerank_log
    record["retrieval"] = [r.to_dict() for r in reranked]

    gold_bag = None
    if q.has_gold_form():
        gold_query = q.gold_query()
        schema = svc.schema or Schema.infer([gold_query])
        try:
            gold_bag = extract_elements(gold_query, schema)
        except KBQAError:
            gold_bag = None
    record["recall"] = question_recall(retrieved, gold_bag) if gold_bag is not None else None

    if stage == "rerank":
        return record

    fitted = fit_generation_prompt(q.question, q.entities, reranked, svc.exemplars, svc.template,
                                   svc.budget, cfg.token_ceiling)
    record["exemplars"] = [ex.qid for ex in fitted.exemplars]
    record["budget"] = {**fitted.budget.as_mapping(), "shots": fitted.budget.shots}
    record["generation_prompt"] = fitted.prompt
    calls["generation"] += 1
    raw = svc.llm.complete(CompletionRequest.single(
        fitted.prompt, cfg.llm.model, cfg.llm.temperature, max_tokens=cfg.llm.max_tokens,
        request_id=f"{q.qid}:generate",
    ))
    initial = read_generation(raw)
    max_iters = cfg.max_egf_iters if stage == "all" else 0
    trace: EgfTrace = run_egf(svc.llm, svc.backend, initial, fitted.prompt, max_iters,
                              cfg.llm.model, cfg.llm.temperature, request_id=q.qid)
    calls["feedback"] = trace.feedback_calls
    record["egf"] = trace.to_dict()
    if trace.error:
        record["status"], record["error"] = "error", trace.error

    final = trace.final
    pred = final.answers if final is not None and final.answers is not None else AnswerSet()
    record["final_sparql"] = final.sparql if final is not None else None
    record["final_answers"] = pred.to_json()

    gold = _gold_answers(q, svc.backend)
    metrics: dict[str, Any] = {"precision": None, "recall": None, "f1": None, "em": None}
    if gold is not None:
        p, r_, f1 = answer_f1(pred, gold)
        metrics.update(precision=p, recall=r_, f1=f1)
        record["gold_answers"] = gold.to_json()
    if q.has_gold_form() and final is not None and final.sparql is not None and metrics["f1"] is not None:
        pred_q = parse_sparql(final.sparql)
        gold_q = q.gold_query()
        schema = svc.schema or Schema.infer([pred_q, gold_q])
        metrics["em"] = em_classify(pred_q, gold_q, metrics["f1"], schema).to_dict()
    record["metrics"] = metrics
    return record


def error_record(q: Question, exc: BaseException) -> dict:
    return {"qid": q.qid, "question": q.question, "status": "error",
            "error": f"{type(exc).__name__}: {exc}"}


def _read_manifest(path: Path) -> dict[str, dict]:
    records: dict[str, dict] = {}
    if not path.exists():
        return records
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # a torn final line from an interrupted run
                records[rec["qid"]] = rec
    return records


def summarize(records: list[dict]) -> dict[str, Any]:
    """Aggregates recomputable from per-question records alone."""
    ok = [r for r in records if r.get("status") == "ok"]
    f1s = [r["metrics"]["f1"] for r in ok if r.get("metrics", {}).get("f1") is not None]
    verdicts: dict[str, int] = {}
    for r in ok:
        em = r.get("metrics", {}).get("em")
        if em:
            verdicts[em["verdict"]] = verdicts.get(em["verdict"], 0) + 1
    recalls = [r["recall"] for r in ok if r.get("recall") is not None]
    totals = [sum(r["api_calls"].values()) for r in ok if "api_calls" in r]
    feedback = [r["api_calls"]["feedback"] for r in ok if "api_calls" in r]

    def mean(xs):
        return round(sum(xs) / len(xs), 6) if xs else None

    return {
        "questions": len(records),
        "ok": len(ok),
        "errors": len(records) - len(ok),
        "f1_mean": mean(f1s),
        "em_verdicts": dict(sorted(verdicts.items())),
        "recall_error_rate": round(100.0 * sum(1 for x in recalls if x < 1.0) / len(recalls), 6) if recalls else None,
        "api_calls_mean": mean(totals),
        "feedback_calls_mean": mean(feedback),
    }


@dataclass
class RunResult:
    records: list[dict]
    summary: dict[str, Any]
    output_dir: Path

    @property
    def errors(self) -> int:
        return self.summary["aggregate"]["errors"]


def run_pipeline(cfg: RunConfig, stage: str = "all", limit: int | None = None,
                 llm: LLMClient | None = None, backend=None) -> RunResult:
    """Process every question not already completed in the output manifest.

    The manifest is appended per question and finally rewritten in dataset
    order, so it is byte-identical however the work was split across runs.
    """
    if stage not in STAGES:
        raise ConfigError(f"stage must be one of {STAGES}")
    svc = build_services(cfg, llm, backend)
    questions = load_dataset(cfg.dataset)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / MANIFEST
    done = {qid: r for qid, r in _read_manifest(manifest).items() if r.get("status") == "ok"}
    todo = [q for q in questions if q.qid not in done]
    if limit is not None:
        todo = todo[: max(0, limit)]

    lock = threading.Lock()

    def work(q: Question) -> dict:
        start = time.perf_counter()
        try:
            rec = process_question(cfg, svc, q, stage)
        except (KBQAError, LLMError, OSError, ValueError) as exc:
            log.warning("question %s failed: %s", q.qid, exc)
            rec = error_record(q, exc)
        except Exception as exc:  # isolate anything unexpected to this question
            log.exception("question %s crashed", q.qid)
            rec = error_record(q, exc)
        with lock:
            with open(manifest, "a", encoding="utf-8") as fh:
                fh.write(dumps(rec) + "\n")
            with open(out / TIMINGS, "a", encoding="utf-8") as fh:
                fh.write(dumps({"qid": q.qid, "seconds": round(time.perf_counter() - start, 4)}) + "\n")
        return rec

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for rec in pool.map(work, todo):
            done[rec["qid"]] = rec

    records = [done[q.qid] for q in questions if q.qid in done]
    tmp = manifest.with_suffix(".tmp")
    tmp.write_text("".join(dumps(r) + "\n" for r in records), encoding="utf-8")
    tmp.replace(manifest)

    review = [
        {"qid": r["qid"], "pred": r.get("final_sparql"), "reason": r["metrics"]["em"]["reason"]}
        for r in records
        if r.get("metrics", {}).get("em") and r["metrics"]["em"]["verdict"] == NO_DECISION
    ]
    (out / REVIEW).write_text("".join(dumps(x) + "\n" for x in review), encoding="utf-8")

    summary = {
        "stage": stage,
        "aggregate": summarize(records),
        "config": cfg.snapshot(),
        "inputs": {k: sha256_file(v) for k, v in sorted(cfg.input_paths().items())},
        "exemplars": [ex.qid for ex in svc.exemplars],
    }
    (out / SUMMARY).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return RunResult(records, summary, out)

