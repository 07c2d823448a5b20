"""Regenerate the toy pipeline fixtures under ``tests/data/toy``.

Run ``python3 tests/make_toy_fixtures.py``. Gold answers come from the
brute-force evaluator, so the files stay consistent with ``toy_kb.py``.
The scripted LLM is laid out so that 7 feedback calls happen over the 10
questions.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from kbqa.kb.oracle import eval_sexpr  # noqa: E402
from kbqa.kb.store import TripleStore  # noqa: E402
from kbqa.logical_form import parse_sexpr, sexpr_to_sparql, to_sparql  # noqa: E402
from tests.toy_kb import build_triples  # noqa: E402

OUT = Path(__file__).resolve().parent / "data" / "toy"
STORE = TripleStore(build_triples())


def ent(mention, mid):
    return {"mention": mention, "mid": mid, "label": mention}


def sparql(sexpr: str) -> str:
    return to_sparql(sexpr_to_sparql(parse_sexpr(sexpr)))


# qid, question, entities, gold s-expression, domain
QUESTIONS = [
    ("q01", "what languages are spoken in indonesia", [ent("indonesia", "m.097kp")],
     "(AND language.human_language (JOIN language.human_language.countries_spoken_in m.097kp))", "language"),
    ("q02", "when were the texas rangers founded", [ent("texas rangers", "m.07l8x")],
     "(JOIN (R sports.sports_team.founded) m.07l8x)", "sports"),
    ("q03", "how many languages are spoken in borduria", [ent("borduria", "m.0c02")],
     "(COUNT (JOIN (R location.country.languages_spoken) m.0c02))", "location"),
    ("q04", "which country has the largest population", [],
     "(ARGMAX location.country location.statistical_region.population)", "location"),
    ("q05", "what is the capital of atlantis", [ent("atlantis", "m.0c01")],
     "(JOIN (R location.country.capital) m.0c01)", "location"),
    ("q06", "which people were born in nusantara city", [ent("nusantara city", "m.0y01")],
     "(AND people.person (JOIN people.person.place_of_birth m.0y01))", "people"),
    ("q07", "which people are taller than 1.85 meters", [],
     '(AND people.person (gt people.person.height_meters "1.85"^^xsd:float))', "people"),
    ("q08", "what sport does the latveria lynx team play", [ent("latveria lynx", "m.0t04")],
     "(JOIN (R sports.sports_team.sport) m.0t04)", "sports"),
    ("q09", "what dialects does the official language of indonesia have", [ent("indonesia", "m.097kp")],
     "(JOIN (R language.human_language.dialects) (JOIN (R location.country.official_language) m.097kp))",
     "language"),
    ("q10", "who is the oldest person from atlantis", [ent("atlantis", "m.0c01")],
     "(ARGMIN (AND people.person (JOIN people.person.nationality m.0c01)) people.person.date_of_birth)",
     "people"),
]

DISTRACTOR_RELATIONS = [
    "location.location.containedby", "people.person.languages", "sports.sports_team.location",
    "sports.sports_team.championships", "language.language_dialect.language",
    "people.person.nationality", "location.country.official_language",
    "location.statistical_region.population", "people.person.date_of_birth",
]
DISTRACTOR_CLASSES = ["location.citytown", "sports.sport", "language.language_dialect", "people.person"]

# retriever r1 misses q08's gold relation; r2 covers it
R1_MISSES = {"q08": "sports.sports_team.sport"}

# (qid -> ordered generation responses); all but the last come back empty or unparseable
GENERATIONS = {
    "q01": ["SELECT DISTINCT ?x WHERE { ?x ns:language.human_language.countries_spoken_in ns:m.097kp . "
            "?x ns:type.object.type ns:language.human_language . }"],
    "q02": ["SELECT DISTINCT ?x WHERE { ?x ns:sports.sports_team.founded ns:m.07l8x . }",
            "```sparql\nSELECT DISTINCT ?x\nWHERE {\nns:m.07l8x ns:sports.sports_team.founded ?x .\n}\n```"],
    # answer-equivalent but through the inverse relation: NON_EQUIVALENT
    "q03": ["SPARQL: SELECT (COUNT(DISTINCT ?x) AS ?count) WHERE { ?x ns:language.human_language.countries_spoken_in "
            "ns:m.0c02 . }"],
    "q04": ["SELECT DISTINCT ?x WHERE { ?x ns:type.object.type ns:location.country . "
            "?x ns:location.statistical_region.population ?y0 . } ORDER BY DESC(?y0) LIMIT 1"],
    "q05": ["SELECT DISTINCT ?x WHERE { ns:m.0c01 ns:location.country.official_language ?x . "
            "?x ns:type.object.type ns:location.citytown . }",
            "SELECT DISTINCT ?x WHERE { ?x ns:location.country.capital ns:m.0c01 . }",
            "SELECT DISTINCT ?x WHERE { ns:m.0c01 ns:location.country.capital ?x . }"],
    # misses one person: F1 < 1
    "q06": ["SELECT DISTINCT ?x WHERE { ?x ns:people.person.place_of_birth ns:m.0y01 . "
            "?x ns:people.person.languages ns:m.0l01 . ?x ns:type.object.type ns:people.person . }"],
    # only the literal differs from gold, same answers: NO_DECISION
    "q07": ['SELECT DISTINCT ?x WHERE { ?x ns:type.object.type ns:people.person . '
            '?x ns:people.person.height_meters ?y0 . FILTER (?y0 > "1.95"^^xsd:float) }',
            'SELECT DISTINCT ?x WHERE { ?x ns:type.object.type ns:people.person . '
            '?x ns:people.person.height_meters ?y0 . FILTER (?y0 > "1.86"^^xsd:float) }'],
    "q08": ["SELECT DISTINCT ?x WHERE { ns:m.0t04 ns:sports.sports_team.sport ?x . }"],
    "q09": ["I am not sure which relation to use here.",
            "SELECT DISTINCT ?x WHERE { ns:m.097kp ns:location.country.official_language ?y0 . "
            "?x ns:language.human_language.dialects ?y0 . }",
            "SELECT DISTINCT ?x WHERE { ns:m.097kp ns:location.country.languages_spoken ?y0 . "
            "?y0 ns:language.human_language.dialects ?x . ?x ns:type.object.type ns:location.country . }",
            "SELECT DISTINCT ?x WHERE { ns:m.097kp ns:location.country.official_language ?y0 . "
            "?y0 ns:language.human_language.dialects ?x . }"],
    "q10": ["SELECT DISTINCT ?x WHERE { ?x ns:type.object.type ns:people.person . "
            "?x ns:people.person.nationality ns:m.0c01 . ?x ns:people.person.date_of_birth ?y0 . } "
            "ORDER BY ?y0 LIMIT 1"],
}

EXEMPLARS = [
    ("t01", "what languages are spoken in freedonia", [ent("freedonia", "m.0c03")],
     "(JOIN (R location.country.languages_spoken) m.0c03)"),
    ("t02", "what is the capital of borduria", [ent("borduria", "m.0c02")],
     "(JOIN (R location.country.capital) m.0c02)"),
    ("t03", "how many people were born in 1990 in borduria", [ent("borduria", "m.0c02")],
     "(COUNT (AND people.person (JOIN people.person.nationality m.0c02)))"),
    ("t04", "which team has won the most championships", [],
     "(ARGMAX sports.sports_team sports.sports_team.championships)"),
    ("t05", "what language is the dialect dialect-five part of", [ent("dialect-five", "m.0d05")],
     "(JOIN (R language.language_dialect.language) m.0d05)"),
    ("t06", "which city is the home of the rangers of 1903", [ent("old rangers", "m.0t01")],
     "(JOIN (R sports.sports_team.location) m.0t01)"),
    ("t07", "what is the population of genovia", [ent("genovia", "m.0c04")],
     "(JOIN (R location.statistical_region.population) m.0c04)"),
    ("t08", "which teams play sport one", [ent("sport one", "m.0s01")],
     "(AND sports.sports_team (JOIN sports.sports_team.sport m.0s01))"),
]
SOURCE_EXEMPLARS = [
    ("s01", "which country contains city three", [ent("city three", "m.0y03")],
     "(JOIN (R location.location.containedby) m.0y03)"),
    ("s02", "who speaks language eight", [ent("language eight", "m.0l08")],
     "(AND people.person (JOIN people.person.languages m.0l08))"),
    ("s03", "what is the nationality of person seven", [ent("person seven", "m.0p07")],
     "(JOIN (R people.person.nationality) m.0p07)"),
]


def gold_relations(sexpr: str) -> list[str]:
    q = sexpr_to_sparql(parse_sexpr(sexpr))
    rels = [t.p.value for t in q.patterns if t.p.value != "type.object.type"]
    classes = [t.o.value for t in q.patterns if t.p.value == "type.object.type"]
    return list(dict.fromkeys(rels)), list(dict.fromkeys(classes))


def retrieval_record(qid: str, sexpr: str, retriever: str) -> dict:
    rels, classes = gold_relations(sexpr)
    missing = R1_MISSES.get(qid) if retriever == "r1" else None
    rels = [r for r in rels if r != missing]
    relations = list(dict.fromkeys(DISTRACTOR_RELATIONS[:4] + rels + DISTRACTOR_RELATIONS[4:]))
    relations = [r for r in relations if r != missing]
    cls = list(dict.fromkeys(DISTRACTOR_CLASSES[:2] + classes + DISTRACTOR_CLASSES[2:]))
    paths = [
        # s-expression paths, as some retrievers emit them, get compiled at load time
        "(JOIN (R location.location.containedby) m.0y01)",
        sparql(sexpr) if not missing else "SELECT DISTINCT ?x WHERE { ?x ns:sports.sports_team.location ns:m.0y07 . }",
        "SELECT DISTINCT ?x WHERE { ?x ns:people.person.languages ns:m.0l01 . }",
        "(AND people.person (JOIN people.person.nationality m.097kp))",
    ]
    if retriever == "r2":
        paths = paths[1:3]
        relations = relations[-6:] + rels
        cls = cls[:3]
    return {"qid": qid, "paths": paths, "relations": list(dict.fromkeys(relations)),
            "classes": cls}


def exemplar_record(qid, question, entities, sexpr, retrievers=("r1",)) -> dict:
    retrievals = {}
    for rid in retrievers:
        rec = retrieval_record(qid, sexpr, rid)
        rec.pop("qid")
        retrievals[rid] = rec
    return {"qid": qid, "question": question, "entities": entities, "gold_sexpr": sexpr,
            "retrievals": retrievals}


def dataset_record(qid, question, entities, sexpr, domain) -> dict:
    answers = eval_sexpr(parse_sexpr(sexpr), STORE)
    assert not answers.is_empty(), qid
    return {"qid": qid, "question": question, "entities": entities, "gold_sexpr": sexpr,
            "gold_answers": answers.to_json(), "domain": domain}


def script_rules() -> list[dict]:
    rules = [
        {"comment": "q01 paths: reversed candidate order",
         "contains": ["select five relevant candidate paths", "question: what languages are spoken in indonesia"],
         "response": "@@".join(reversed(retrieval_paths("q01")))},
        {"comment": "q01 relations: gold relation first, plus a hallucinated one",
         "contains": ["select ten relevant candidate relations", "question: what languages are spoken in indonesia"],
         "response": "language.human_language.countries_spoken_in@@location.country.made_up@@"
                     "location.country.languages_spoken"},
        {"comment": "q04 types: duplicates",
         "contains": ["candidate answer entity types", "question: which country has the largest population"],
         "response": "location.country@@location.country@@ people.person "},
    ]
    for phrase in ("select five relevant candidate paths", "select ten relevant candidate relations",
                   "candidate answer entity types"):
        rules.append({"comment": "fallback: keep retriever order", "contains": phrase, "response": ""})
    for qid, question, *_ in QUESTIONS:
        for i, text in enumerate(GENERATIONS[qid]):
            rules.append({"contains": f"question: {question}\n\ncandidate entities:", "iteration": i,
                          "response": text})
    return rules


def retrieval_paths(qid: str) -> list[str]:
    from kbqa.retrieval import result_from_record

    sexpr = next(q[3] for q in QUESTIONS if q[0] == qid)
    return list(result_from_record(retrieval_record(qid, sexpr, "r1"), "r1").paths)


def write_jsonl(name: str, rows: list[dict]) -> None:
    (OUT / name).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def main() -> None:
    write_jsonl("dataset.jsonl", [dataset_record(*q) for q in QUESTIONS])
    write_jsonl("retrieval_r1.jsonl", [retrieval_record(q[0], q[3], "r1") for q in QUESTIONS])
    write_jsonl("retrieval_r2.jsonl", [retrieval_record(q[0], q[3], "r2") for q in QUESTIONS])
    write_jsonl("exemplars.jsonl", [exemplar_record(*e) for e in EXEMPLARS])
    write_jsonl("exemplars_2r.jsonl", [exemplar_record(*e, retrievers=("r1", "r2")) for e in EXEMPLARS])
    write_jsonl("source_exemplars.jsonl", [exemplar_record(*e) for e in SOURCE_EXEMPLARS])
    (OUT / "mock_script.json").write_text(
        json.dumps({"rules": script_rules()}, indent=1) + "\n", encoding="utf-8"
    )
    config = {
        "dataset": "dataset.jsonl",
        "exemplar_pool": "exemplars.jsonl",
        "source_pool": "source_exemplars.jsonl",
        "retrievers": [{"id": "r1", "file": "retrieval_r1.jsonl"}],
        "schema": {"classes": "classes.txt", "relations": "relations.txt"},
        "kb": {"triples": "triples.tsv"},
        "llm": {"backend": "script", "script": "mock_script.json", "model": "toy-model", "temperature": 0},
        "shots": 5,
        "prompt_template": "standard",
        "max_egf_iters": 4,
        "seed": 7,
        "workers": 3,
        "output_dir": "out",
    }
    (OUT / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
