"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

from __future__ import annotations

import random
import re
import time
from dataclasses import replace

import pytest

from kbqa.dataset import load_dataset
from kbqa.egf import EXHAUSTED, NON_EMPTY, run_egf
from kbqa.errors import KBQAError
from kbqa.generate import PromptTemplate, build_generation_prompt, load_exemplars, merge_budgets, read_generation
from kbqa.kb import eval_sexpr, execute
from kbqa.llm import ScriptedClient
from kbqa.logical_form import Iri, Literal, parse_sparql, sexpr_to_sparql
from kbqa.logical_form.elements import extract_elements
from kbqa.logical_form.sparql import Filter, OrderBy
from kbqa.metrics import EQUIVALENT, NO_DECISION, NON_EQUIVALENT, answer_f1, em_classify, js_divergence
from kbqa.pipeline import MANIFEST, run_pipeline
from kbqa.rerank import DEFAULT_K, RerankRequest, build_rerank_prompt, parse_rerank_response
from kbqa.retrieval import LinkedEntity, RetrievalResult, load_retrieval, recall_error_rate
from tests.conftest import GOLDEN, TOY, toy_config
from tests.sexpr_gen import SExprGenerator, depth
from tests.test_rerank import CANDIDATES, _fuzzed_response

TYPE = "type.object.type"


@pytest.fixture
def report(capsys):
    def emit(number: int, name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}")
        assert ok, detail

    return emit


# 1 ------------------------------------------------------------------------


def test_1_compiler_soundness(store, report):
    gen = SExprGenerator(store, seed=2024)
    start = time.perf_counter()
    cases = mismatches = 0
    for _ in range(1200):
        e = gen.root(4)
        assert depth(e) <= 4
        cases += 1
        if execute(sexpr_to_sparql(e), store).normalized() != eval_sexpr(e, store).normalized():
            mismatches += 1
    elapsed = time.perf_counter() - start
    report(1, "compiler soundness", mismatches == 0 and elapsed < 5.0 and len(store) in range(150, 251),
           f"{cases} cases, {mismatches} mismatches, {elapsed:.2f}s, {len(store)} triples")


# 2 ------------------------------------------------------------------------


class Mutator:
    def __init__(self, store, schema, rng):
        self.rng = rng
        self.relations = sorted(schema.relations - {TYPE})
        self.classes = sorted(schema.classes)
        self.entities = sorted({t[0] for t in store if isinstance(t[0], str)})
        self.literals = sorted({t[2] for t in store if isinstance(t[2], Literal)}, key=repr)

    def _edit_pattern(self, q, pick, change):
        idx = [i for i, t in enumerate(q.patterns) if pick(t)]
        if not idx:
            return None
        i = self.rng.choice(idx)
        patterns = list(q.patterns)
        patterns[i] = change(patterns[i])
        return replace(q, patterns=tuple(patterns))

    def mutate(self, q):
        kind = self.rng.choice(["permute", "relation", "literal", "entity", "class", "duplicate",
                                "drop", "direction", "filter_op", "identity"])
        if kind == "permute":
            patterns = list(q.patterns)
            self.rng.shuffle(patterns)
            return kind, replace(q, patterns=tuple(patterns))
        if kind == "relation":
            return kind, self._edit_pattern(
                q, lambda t: isinstance(t.p, Iri) and t.p.value != TYPE,
                lambda t: replace(t, p=Iri(self.rng.choice(self.relations))))
        if kind == "literal":
            if q.filters and self.rng.random() < 0.6:
                i = self.rng.randrange(len(q.filters))
                filters = list(q.filters)
                filters[i] = replace(filters[i], value=self.rng.choice(self.literals))
                return kind, replace(q, filters=tuple(filters))
            return kind, self._edit_pattern(q, lambda t: isinstance(t.o, Literal),
                                             lambda t: replace(t, o=self.rng.choice(self.literals)))
        if kind == "entity":
            return kind, self._edit_pattern(
                q, lambda t: isinstance(t.o, Iri) and t.o.value.startswith("m.") or
                isinstance(t.s, Iri) and t.s.value.startswith("m."),
                lambda t: replace(t, o=Iri(self.rng.choice(self.entities)))
                if isinstance(t.o, Iri) and t.o.value.startswith("m.")
                else replace(t, s=Iri(self.rng.choice(self.entities))))
        if kind == "class":
            return kind, self._edit_pattern(q, lambda t: t.p == Iri(TYPE) and isinstance(t.o, Iri),
                                             lambda t: replace(t, o=Iri(self.rng.choice(self.classes))))
        if kind == "duplicate":
            return kind, replace(q, patterns=q.patterns + (self.rng.choice(q.patterns),))
        if kind == "drop" and len(q.patterns) > 1:
            i = self.rng.randrange(len(q.patterns))
            return kind, replace(q, patterns=q.patterns[:i] + q.patterns[i + 1:])
        if kind == "direction" and q.order is not None:
            return kind, replace(q, order=OrderBy(q.order.var, not q.order.descending))
        if kind == "filter_op" and q.filters:
            f = q.filters[0]
            op = self.rng.choice([o for o in ("lt", "le", "gt", "ge") if o != f.op])
            return kind, replace(q, filters=(Filter(op, f.var, f.value),) + q.filters[1:])
        return "identity", q


def test_2_em_precision(store, schema, report):
    rng = random.Random(99)
    gen = SExprGenerator(store, seed=99)
    mutator = Mutator(store, schema, rng)
    pairs = bad_equivalent = bad_non_equivalent = 0
    verdicts = {EQUIVALENT: 0, NON_EQUIVALENT: 0, NO_DECISION: 0}
    while pairs < 1200:
        gold = sexpr_to_sparql(gen.root(4))
        _, pred = mutator.mutate(gold)
        if pred is None:
            continue
        try:
            pa, ga = execute(pred, store), execute(gold, store)
        except KBQAError:
            continue
        pairs += 1
        f1 = answer_f1(pa, ga)[2]
        v = em_classify(pred, gold, f1, schema)
        verdicts[v.verdict] += 1
        if v.verdict == EQUIVALENT and pa.normalized() != ga.normalized():
            bad_equivalent += 1
        if v.verdict == NON_EQUIVALENT and extract_elements(pred, schema) == extract_elements(gold, schema):
            bad_non_equivalent += 1

    gold = parse_sparql("SELECT DISTINCT ?x WHERE { ?x ns:type.object.type ns:people.person . "
                        "?x ns:people.person.nationality ns:m.0c01 . }")
    permuted = replace(gold, patterns=gold.patterns[::-1])
    substituted = replace(gold, patterns=(gold.patterns[0], replace(gold.patterns[1], p=Iri("people.person.place_of_birth"))))
    tall = parse_sparql('SELECT DISTINCT ?x WHERE { ?x ns:type.object.type ns:people.person . '
                        '?x ns:people.person.height_meters ?h . FILTER (?h > "1.85"^^xsd:float) }')
    shorter = replace(tall, filters=(Filter("gt", tall.filters[0].var, Literal("1.70", "xsd:float")),))

    def verdict(p, g):
        return em_classify(p, g, answer_f1(execute(p, store), execute(g, store))[2], schema).verdict

    named = (verdict(permuted, gold), verdict(substituted, gold), verdict(shorter, tall))
    ok = (bad_equivalent == 0 and bad_non_equivalent == 0 and pairs >= 1000
          and named == (EQUIVALENT, NON_EQUIVALENT, NO_DECISION) and all(verdicts.values()))
    report(2, "EM precision", ok,
           f"{pairs} pairs {verdicts}; EQUIVALENT-with-different-answers {bad_equivalent}, "
           f"NON_EQUIVALENT-with-equal-bags {bad_non_equivalent}; named cases {named}")


# 3 ------------------------------------------------------------------------


def test_3_rerank_contract(report):
    rng = random.Random(3)
    violations = 0
    for _ in range(200):
        n = rng.randrange(1, 14)
        cands = [f"rel.cand.{i}" for i in range(n)]
        k = rng.choice([1, 5, 10])
        out = parse_rerank_response(_fuzzed_response(rng, cands), cands, k)
        if not (set(out) <= set(cands) and len(out) == len(set(out)) == min(k, n)):
            violations += 1
    golden_ok = all(
        build_rerank_prompt(RerankRequest(a, "what the language spoken in indonesia?",
                                          (LinkedEntity("indonesia", "m.097kp"),), CANDIDATES[a])).encode()
        == (GOLDEN / f"rerank_{a}.txt").read_bytes()
        for a in ("paths", "relations", "classes")
    )
    k_ok = DEFAULT_K == {"paths": 5, "relations": 10, "classes": 10}
    report(3, "re-rank contract", violations == 0 and golden_ok and k_ok,
           f"200 fuzzed responses, {violations} violations; golden prompts {'match' if golden_ok else 'differ'}; "
           f"default k {tuple(DEFAULT_K.values())}")


# 4 ------------------------------------------------------------------------


def _max_section_sizes(block: str) -> dict[str, list[int]]:
    sizes = {}
    for aspect, label in (("paths", "candidate paths from Retriever represented using SPARQL:"),
                          ("relations", "candidate relations from Retriever:"),
                          ("classes", "candidate entity types from Retriever:")):
        sizes[aspect] = [len(m.split("|\n")) for m in re.findall(
            re.escape(label) + r"\n\n(.*?)(?=\n\ncandidate |\n\nSPARQL:)", block, re.S)]
    return sizes


def test_4_merge_budgets(report):
    one, two = merge_budgets(1), merge_budgets(2)
    r1 = load_retrieval(TOY / "retrieval_r1.jsonl", "r1")
    r2 = load_retrieval(TOY / "retrieval_r2.jsonl", "r2")
    pool = load_exemplars(TOY / "exemplars_2r.jsonl")[:5]
    blocks_checked, over = 0, 0
    for q in load_dataset(TOY / "dataset.jsonl"):
        prompt = build_generation_prompt(q.question, q.entities, [r1[q.qid], r2[q.qid]], pool,
                                         PromptTemplate(), two, token_ceiling=None)
        for block in re.split(r"\n\n(?=question: )", prompt)[1:]:
            blocks_checked += 1
            sizes = _max_section_sizes(block)
            caps = two.as_mapping()
            if any(len(v) != 2 or max(v) > caps[a] for a, v in sizes.items()):
                over += 1
    ok = ((one.paths, one.relations, one.classes) == (5, 10, 10)
          and (two.paths, two.relations, two.classes) == (3, 5, 5) and over == 0)
    report(4, "merge budgets", ok,
           f"merge_budgets(1)={(one.paths, one.relations, one.classes)}, merge_budgets(2)="
           f"{(two.paths, two.relations, two.classes)}; {blocks_checked} two-retriever blocks, {over} over budget")


# 5 ------------------------------------------------------------------------

HIT = "SELECT DISTINCT ?x WHERE { ns:m.07l8x ns:sports.sports_team.founded ?x . }"
MISS = "SELECT DISTINCT ?x WHERE { ns:m.07l8x ns:sports.sports_team.founded ?x . ?x ns:type.object.type ns:people.person . }"


class _Backend:
    def __init__(self, store):
        self.store = store

    def execute(self, q):
        return execute(q, self.store)


def test_5_egf_bound(store, report):
    results = []
    for n in range(1, 6):
        # trailing extra HITs would make any call after success visible in llm.calls
        llm = ScriptedClient.from_queue([MISS] * max(0, n - 2) + [HIT] * (1 if n > 1 else 0) + [HIT] * 3)
        trace = run_egf(llm, _Backend(store), read_generation(HIT if n == 1 else MISS), "ctx", max_iters=4)
        results.append((n, trace.generations, trace.status, llm.calls))
    never = ScriptedClient.from_queue([MISS] * 20)
    t = run_egf(never, _Backend(store), read_generation(MISS), "ctx", max_iters=4)
    ok = (all(g == n and s == NON_EMPTY and c == n - 1 for n, g, s, c in results)
          and t.generations == 5 and t.status == EXHAUSTED and never.calls == 4)
    report(5, "EGF bound", ok,
           f"success at n -> generations {[g for _, g, _, _ in results]}, calls after success 0; "
           f"never succeeds -> {t.generations} generations, {t.status}")


# 6 ------------------------------------------------------------------------


def test_6_metrics(report):
    def A(*v):
        from kbqa.kb import AnswerSet
        return AnswerSet(values=frozenset(v))

    f1_cases = [answer_f1(A("a", "b"), A("a", "b")), answer_f1(A("x"), A("a", "b")), answer_f1(A("a", "b"), A("b", "c"))]
    jsd = (js_divergence([0.25, 0.75], [0.25, 0.75]), js_divergence([1, 0], [0, 1]), js_divergence([0.5, 0.5], [1, 0]))
    ok = (f1_cases == [(1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.5, 0.5, 0.5)]
          and jsd[0] == 0.0 and jsd[1] == 1.0 and abs(jsd[2] - 0.31128) < 1e-5)
    report(6, "metrics", ok, f"F1 cases {f1_cases}; JSD identical={jsd[0]}, disjoint={jsd[1]}, half-vs-point={jsd[2]:.6f}")


# 7 ------------------------------------------------------------------------


def test_7_end_to_end_determinism(tmp_path, report):
    a = run_pipeline(toy_config(tmp_path / "a"))
    b = run_pipeline(toy_config(tmp_path / "b", workers=1))
    run_pipeline(toy_config(tmp_path / "c"), limit=5)
    c = run_pipeline(toy_config(tmp_path / "c"))
    ma, mb, mc = ((r.output_dir / MANIFEST).read_bytes() for r in (a, b, c))
    per_question = [sum(r["api_calls"].values()) for r in a.records]
    accounted = all(r["api_calls"]["rerank"] == 3 and r["api_calls"]["generation"] == 1 for r in a.records)
    agg = a.summary["aggregate"]
    ok = (ma == mb == mc and accounted and agg["api_calls_mean"] == 4.7
          and agg["feedback_calls_mean"] == 0.7 and agg["errors"] == 0)
    report(7, "end-to-end determinism", ok,
           f"cold/cold/resume manifests identical={ma == mb == mc}; calls per question {per_question}; "
           f"mean {agg['api_calls_mean']} (feedback {agg['feedback_calls_mean']})")


# 8 ------------------------------------------------------------------------


def test_8_recall_metric(schema, report):
    questions = load_dataset(TOY / "dataset.jsonl")[:4]
    gold = {q.qid: extract_elements(q.gold_query(), schema) for q in questions}
    runs = {}
    for q in questions:
        bag = gold[q.qid]
        relations = sorted(bag.relations)
        if q.qid == questions[1].qid:
            relations = relations[:-1] + ["sports.sports_team.location"]  # one gold relation missing
        runs[q.qid] = [RetrievalResult("r1", q.qid, relations=tuple(relations), classes=tuple(sorted(bag.classes)))]
    before = recall_error_rate(runs, gold)
    missing = sorted(gold[questions[1].qid].relations)[-1:]
    runs[questions[1].qid].append(RetrievalResult("r2", questions[1].qid, relations=tuple(missing)))
    after = recall_error_rate(runs, gold)
    report(8, "recall metric", before == 25.0 and after == 0.0,
           f"one retriever {before}, with a second retriever {after}")
