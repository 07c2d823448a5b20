"""Run configuration (JSON). Relative paths resolve against the config file's directory."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from kbqa.errors import ConfigError

TEMPLATES = ("standard", "delimited")
STAGES = ("rerank", "generate", "all")


@dataclass
class RetrieverSpec:
    id: str
    file: str | None = None
    url: str | None = None


@dataclass
class LLMSettings:
    backend: str = "script"  # "script" | "openai"
    script: str | None = None
    model: str = "gpt-4-0613"
    temperature: float = 0.0
    max_tokens: int | None = None
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    max_in_flight: int = 4
    max_retries: int = 5
    timeout: float = 120.0
    cache: bool = True
    cache_dir: str | None = None


@dataclass
class KBSettings:
    triples: str | None = None
    endpoint: str | None = None
    timeout: float = 30.0
    max_in_flight: int = 4


@dataclass
class RunConfig:
    dataset: str
    retrievers: list[RetrieverSpec]
    kb: KBSettings
    llm: LLMSettings
    exemplar_pool: str | None = None
    source_pool: str | None = None
    zero_shot: bool = False
    schema_classes: str | None = None
    schema_relations: str | None = None
    budgets: dict[str, int] | None = None  # None = merge_budgets(len(retrievers))
    upstream_k: dict[str, int] = field(default_factory=lambda: {"paths": 20, "relations": 50, "classes": 50})
    shots: int = 5
    prompt_template: str = "standard"
    max_egf_iters: int = 4
    token_ceiling: int = 8192
    seed: int = 0
    workers: int = 4
    output_dir: str = "runs/out"

    def validate(self) -> None:
        problems = []
        if not self.retrievers:
            problems.append("at least one retriever is required")
        ids = [r.id for r in self.retrievers]
        if len(set(ids)) != len(ids):
            problems.append(f"duplicate retriever ids: {ids}")
        for r in self.retrievers:
            if bool(r.file) == bool(r.url):
                problems.append(f"retriever {r.id!r} needs exactly one of 'file' or 'url'")
        if self.prompt_template not in TEMPLATES:
            problems.append(f"prompt_template must be one of {TEMPLATES}")
        if self.shots < 0 or self.max_egf_iters < 0 or self.workers < 1:
            problems.append("shots and max_egf_iters must be >= 0, workers >= 1")
        if bool(self.kb.triples) == bool(self.kb.endpoint):
            problems.append("kb needs exactly one of 'triples' or 'endpoint'")
        if self.llm.backend not in ("script", "openai"):
            problems.append("llm.backend must be 'script' or 'openai'")
        if self.llm.backend == "script" and not self.llm.script:
            problems.append("llm.script is required for the script backend")
        if self.llm.temperature < 0:
            problems.append("llm.temperature must be >= 0")
        if bool(self.schema_classes) != bool(self.schema_relations):
            problems.append("schema needs both 'classes' and 'relations'")
        pool = self.source_pool if self.zero_shot else self.exemplar_pool
        if self.shots > 0 and not pool:
            problems.append("shots > 0 needs an exemplar pool" + (" (source_pool)" if self.zero_shot else ""))
        if self.budgets is not None:
            missing = {"paths", "relations", "classes"} - set(self.budgets)
            if missing or any(v < 1 for v in self.budgets.values()):
                problems.append("budgets needs paths/relations/classes >= 1")
        for path in self.input_paths().values():
            if not Path(path).exists():
                problems.append(f"missing file: {path}")
        if problems:
            raise ConfigError("; ".join(problems))

    def input_paths(self) -> dict[str, str]:
        """Every file the run reads, keyed by role."""
        paths = {"dataset": self.dataset}
        for key in ("exemplar_pool", "source_pool", "schema_classes", "schema_relations"):
            if getattr(self, key):
                paths[key] = getattr(self, key)
        for r in self.retrievers:
            if r.file:
                paths[f"retriever:{r.id}"] = r.file
        if self.kb.triples:
            paths["kb"] = self.kb.triples
        if self.llm.backend == "script" and self.llm.script:
            paths["llm_script"] = self.llm.script
        return paths

    def snapshot(self) -> dict[str, Any]:
        """Config as recorded in the run summary: location-independent."""
        data = asdict(self)
        data.pop("output_dir")
        data["llm"].pop("cache_dir")
        data["workers"] = None
        for key, value in self.input_paths().items():
            _replace_path(data, key, Path(value).name)
        return data


def _replace_path(data: dict, key: str, name: str) -> None:
    if key.startswith("retriever:"):
        rid = key.split(":", 1)[1]
        for r in data["retrievers"]:
            if r["id"] == rid:
                r["file"] = name
    elif key == "kb":
        data["kb"]["triples"] = name
    elif key == "llm_script":
        data["llm"]["script"] = name
    else:
        data[key] = name


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def config_from_dict(raw: dict, base: Path) -> RunConfig:
    try:
        raw = dict(raw)
        retrievers = [RetrieverSpec(**r) for r in raw.pop("retrievers", [])]
        for r in retrievers:
            r.file = _resolve(base, r.file)
        kb = KBSettings(**raw.pop("kb", {}))
        kb.triples = _resolve(base, kb.triples)
        llm = LLMSettings(**raw.pop("llm", {}))
        llm.script = _resolve(base, llm.script)
        llm.cache_dir = _resolve(base, llm.cache_dir)
        schema = raw.pop("schema", None) or {}
        budgets = raw.pop("budgets", None)
        if budgets == "auto":
            budgets = None
        cfg = RunConfig(
            dataset=_resolve(base, raw.pop("dataset")),
            retrievers=retrievers,
            kb=kb,
            llm=llm,
            schema_classes=_resolve(base, schema.get("classes")),
            schema_relations=_resolve(base, schema.get("relations")),
            budgets=budgets,
            **raw,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    for key in ("exemplar_pool", "source_pool", "output_dir"):
        setattr(cfg, key, _resolve(base, getattr(cfg, key)))
    return cfg


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(raw, path.resolve().parent)
