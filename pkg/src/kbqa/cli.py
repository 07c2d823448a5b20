"""Command-line entry point: ``kbqa <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 run finished with
per-question failures. Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from kbqa.config import load_config
from kbqa.dataset import load_dataset
from kbqa.errors import KBQAError
from kbqa.kb.store import AnswerSet
from kbqa.logical_form.compile import sexpr_to_sparql
from kbqa.logical_form.elements import Schema
from kbqa.logical_form.sexpr import parse_sexpr
from kbqa.logical_form.sparql import parse_sparql, to_endpoint_sparql, to_sparql
from kbqa.metrics import answer_f1, dataset_stats, em_classify
from kbqa.pipeline import build_services, run_pipeline, summarize

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _schema(args) -> Schema | None:
    if args.classes and args.relations:
        return Schema.load(args.classes, args.relations)
    if args.classes or args.relations:
        raise UsageError("--classes and --relations go together")
    return None


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    svc = build_services(cfg)
    questions = load_dataset(cfg.dataset)
    missing = {
        rid: sum(1 for q in questions if q.qid not in table)
        for rid, table in svc.retrieval.items()
    }
    _print_json({
        "ok": True,
        "questions": len(questions),
        "retrievers": [r.id for r in cfg.retrievers],
        "questions_without_retrieval": missing,
        "exemplars": [ex.qid for ex in svc.exemplars],
        "budget": {**svc.budget.as_mapping(), "shots": svc.budget.shots},
    })
    return EXIT_OK


def _run(args, stage: str) -> int:
    overrides = {
        "output_dir": str(Path(args.output_dir).resolve()) if args.output_dir else None,
        "workers": args.workers,
        "seed": args.seed,
    }
    cfg = load_config(args.config, overrides)
    result = run_pipeline(cfg, stage=stage, limit=args.limit)
    _print_json(result.summary["aggregate"])
    return EXIT_PARTIAL if result.errors else EXIT_OK


def cmd_eval(args) -> int:
    gold = {q.qid: q for q in load_dataset(args.gold)}
    records = []
    with open(args.manifest, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    for rec in records:
        q = gold.get(rec["qid"])
        if q is None or rec.get("status") != "ok" or "final_answers" not in rec:
            continue
        gold_set = q.gold_answer_set()
        metrics = {"precision": None, "recall": None, "f1": None, "em": None}
        if gold_set is not None:
            pred = AnswerSet(values=frozenset(rec["final_answers"]))
            p, r, f1 = answer_f1(pred, gold_set)
            metrics.update(precision=p, recall=r, f1=f1)
            if q.has_gold_form() and rec.get("final_sparql"):
                pq, gq = parse_sparql(rec["final_sparql"]), q.gold_query()
                metrics["em"] = em_classify(pq, gq, f1, Schema.infer([pq, gq])).to_dict()
        rec["metrics"] = metrics
    _print_json(summarize(records))
    return EXIT_OK


def cmd_stats(args) -> int:
    report = dataset_stats(load_dataset(args.source), load_dataset(args.target), _schema(args))
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_translate(args) -> int:
    q = sexpr_to_sparql(parse_sexpr(args.sexpr))
    print(to_endpoint_sparql(q) if args.endpoint else to_sparql(q))
    return EXIT_OK


def cmd_equiv(args) -> int:
    pred = parse_sparql(Path(args.pred).read_text(encoding="utf-8"))
    gold = parse_sparql(Path(args.gold).read_text(encoding="utf-8"))
    schema = _schema(args) or Schema.infer([pred, gold])
    verdict = em_classify(pred, gold, args.f1, schema)
    if args.json:
        _print_json(verdict.to_dict())
    else:
        print(verdict.verdict)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kbqa", description="Few-shot KBQA pipeline tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a run config and its inputs")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    for name, stage, text in (("rerank", "rerank", "re-rank retrieval only"),
                              ("generate", "generate", "re-rank and generate, no feedback loop"),
                              ("run", "all", "full pipeline")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--output-dir")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--limit", type=int, help="process at most this many pending questions")
        p.set_defaults(func=lambda a, s=stage: _run(a, s))

    p = sub.add_parser("eval", help="recompute metrics from a manifest")
    p.add_argument("manifest")
    p.add_argument("gold", help="dataset file with gold answers / logical forms")
    p.set_defaults(func=cmd_eval)

    for name, func in (("stats", cmd_stats), ("equiv", cmd_equiv)):
        p = sub.add_parser(name)
        if name == "stats":
            p.add_argument("source")
            p.add_argument("target")
        else:
            p.add_argument("pred")
            p.add_argument("gold")
            p.add_argument("--f1", type=float, required=True, help="answer F1 of pred vs gold")
            p.add_argument("--json", action="store_true")
        p.add_argument("--classes")
        p.add_argument("--relations")
        p.set_defaults(func=func)

    p = sub.add_parser("translate", help="compile an s-expression to SPARQL")
    p.add_argument("sexpr")
    p.add_argument("--endpoint", action="store_true", help="emit the endpoint form with PREFIX lines")
    p.set_defaults(func=cmd_translate)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
    except KBQAError as exc:
        _emit_error(type(exc).__name__, str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        _emit_error(type(exc).__name__, str(exc))
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
