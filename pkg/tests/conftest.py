from __future__ import annotations

from pathlib import Path

import pytest

from kbqa.kb.store import TripleStore, load_triples
from kbqa.logical_form.elements import Schema
from tests.toy_kb import CLASSES, RELATIONS, build_triples

DATA = Path(__file__).parent / "data"
TOY = DATA / "toy"
GOLDEN = DATA / "golden"


@pytest.fixture(scope="session")
def store() -> TripleStore:
    return TripleStore(build_triples())


@pytest.fixture(scope="session")
def file_store() -> TripleStore:
    return load_triples(TOY / "triples.tsv")


@pytest.fixture(scope="session")
def schema() -> Schema:
    return Schema(frozenset(CLASSES), frozenset(RELATIONS))


def toy_config(out_dir, **overrides):
    """The toy run config with outputs redirected (and any other overrides)."""
    from kbqa.config import load_config

    return load_config(TOY / "config.json", {"output_dir": str(out_dir), **overrides})
