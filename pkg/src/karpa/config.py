"""Flat dotted-key configuration with environment overrides.

Config files are plain text, one ``section.key = value`` per line, ``#``
comments allowed. Every known key can be overridden by an environment
variable named ``KARPA_<SECTION>_<KEY>`` (dots to underscores, upper
case), e.g. ``KARPA_MATCHER_TOP_K=8``. API keys are never part of the
config file: ``KARPA_LLM_API_KEY`` and ``KARPA_EMBED_API_KEY``.

The config digest identifies the *semantics* of a run; execution-only
knobs (eval concurrency, checkpoint directory) are excluded so the same
evaluation is byte-identical no matter how it was scheduled.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .matching import MatchConfig

PROVIDER_KINDS = ("http", "scripted", "mock")

# key -> (type tag, default)
KNOWN_KEYS: dict[str, tuple[str, object]] = {
    "kg.path": ("str", ""),
    "kg.inverse_edges": ("bool", False),
    "embedding.kind": ("str", "mock"),
    "embedding.endpoint": ("str", ""),
    "embedding.model": ("str", ""),
    "embedding.dim": ("int", 64),
    "embedding.fixtures": ("str", ""),
    "embedding.cache_path": ("str", ""),
    "llm.kind": ("str", "mock"),
    "llm.endpoint": ("str", ""),
    "llm.model": ("str", ""),
    "llm.temperature": ("float", 0.0),
    "llm.max_output": ("int", 1024),
    "llm.fixtures": ("str", ""),
    "matcher.strategy": ("str", "heuristic"),
    "matcher.top_k": ("int", 16),
    "matcher.beam_width": ("int", 8),
    "matcher.max_len": ("opt_int", None),
    "matcher.frontier_cap": ("int", 5000),
    "matcher.exact_mode": ("bool", False),
    "planner.relation_cap": ("int", 30),
    "planner.per_relation_k": ("opt_int", None),
    "reasoner.batch_limit": ("int", 8),
    "eval.mode": ("str", "strict"),
    "eval.concurrency": ("int", 1),
    "eval.checkpoint_dir": ("str", ""),
}

_EXECUTION_ONLY_KEYS = {"eval.concurrency", "eval.checkpoint_dir"}


@dataclass
class EmbeddingOptions:
    kind: str = "mock"
    endpoint: str = ""
    model: str = ""
    dim: int = 64
    fixtures: str = ""
    cache_path: str = ""


@dataclass
class LlmOptions:
    kind: str = "mock"
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_output: int = 1024
    fixtures: str = ""


@dataclass
class KgOptions:
    path: str = ""
    inverse_edges: bool = False


@dataclass
class PlannerOptions:
    relation_cap: int = 30
    per_relation_k: int | None = None


@dataclass
class ReasonerOptions:
    batch_limit: int = 8


@dataclass
class EvalOptions:
    mode: str = "strict"
    concurrency: int = 1
    checkpoint_dir: str = ""


@dataclass
class PipelineConfig:
    kg: KgOptions = field(default_factory=KgOptions)
    embedding: EmbeddingOptions = field(default_factory=EmbeddingOptions)
    llm: LlmOptions = field(default_factory=LlmOptions)
    matcher: MatchConfig = field(default_factory=MatchConfig)
    planner: PlannerOptions = field(default_factory=PlannerOptions)
    reasoner: ReasonerOptions = field(default_factory=ReasonerOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)

    def validate(self) -> None:
        if self.embedding.kind not in PROVIDER_KINDS:
            raise ConfigError(f"embedding.kind must be one of {PROVIDER_KINDS}")
        if self.llm.kind not in PROVIDER_KINDS:
            raise ConfigError(f"llm.kind must be one of {PROVIDER_KINDS}")
        if self.eval.mode not in ("strict", "lenient"):
            raise ConfigError("eval.mode must be strict or lenient")
        if self.eval.concurrency < 1:
            raise ConfigError("eval.concurrency must be >= 1")
        if self.planner.relation_cap < 1:
            raise ConfigError("planner.relation_cap must be >= 1")
        if self.reasoner.batch_limit < 1:
            raise ConfigError("reasoner.batch_limit must be >= 1")


def _coerce(key: str, raw: str) -> object:
    tag, _ = KNOWN_KEYS[key]
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "opt_int":
            return int(raw) if raw else None
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no", ""):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def env_name(key: str) -> str:
    return "KARPA_" + key.upper().replace(".", "_")


def resolve_values(
    file_values: dict[str, str] | None = None, env: dict[str, str] | None = None
) -> dict[str, object]:
    """Defaults, overlaid with file values, overlaid with environment values."""
    env = env if env is not None else dict(os.environ)
    resolved: dict[str, object] = {key: default for key, (_, default) in KNOWN_KEYS.items()}
    for key, raw in (file_values or {}).items():
        resolved[key] = _coerce(key, raw)
    for key in KNOWN_KEYS:
        if env_name(key) in env:
            resolved[key] = _coerce(key, env[env_name(key)])
    return resolved


def build_config(values: dict[str, object]) -> PipelineConfig:
    cfg = PipelineConfig(
        kg=KgOptions(
            path=values["kg.path"],
            inverse_edges=values["kg.inverse_edges"],
        ),
        embedding=EmbeddingOptions(
            kind=values["embedding.kind"],
            endpoint=values["embedding.endpoint"],
            model=values["embedding.model"],
            dim=values["embedding.dim"],
            fixtures=values["embedding.fixtures"],
            cache_path=values["embedding.cache_path"],
        ),
        llm=LlmOptions(
            kind=values["llm.kind"],
            endpoint=values["llm.endpoint"],
            model=values["llm.model"],
            temperature=values["llm.temperature"],
            max_output=values["llm.max_output"],
            fixtures=values["llm.fixtures"],
        ),
        matcher=MatchConfig(
            strategy=values["matcher.strategy"],
            top_k=values["matcher.top_k"],
            beam_width=values["matcher.beam_width"],
            max_len=values["matcher.max_len"],
            frontier_cap=values["matcher.frontier_cap"],
            exact_mode=values["matcher.exact_mode"],
            direction="both" if values["kg.inverse_edges"] else "forward",
        ),
        planner=PlannerOptions(
            relation_cap=values["planner.relation_cap"],
            per_relation_k=values["planner.per_relation_k"],
        ),
        reasoner=ReasonerOptions(batch_limit=values["reasoner.batch_limit"]),
        eval=EvalOptions(
            mode=values["eval.mode"],
            concurrency=values["eval.concurrency"],
            checkpoint_dir=values["eval.checkpoint_dir"],
        ),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> PipelineConfig:
    env = env if env is not None else dict(os.environ)
    file_values: dict[str, str] = {}
    config_path = str(path) if path else env.get("KARPA_CONFIG", "")
    if config_path:
        p = Path(config_path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        file_values = parse_config_text(p.read_text(encoding="utf-8"))
    return build_config(resolve_values(file_values, env))


def config_digest(cfg: PipelineConfig) -> str:
    """Digest of the run semantics; execution-only keys are excluded."""
    values = {
        "kg.path": cfg.kg.path,
        "kg.inverse_edges": cfg.kg.inverse_edges,
        "embedding.kind": cfg.embedding.kind,
        "embedding.endpoint": cfg.embedding.endpoint,
        "embedding.model": cfg.embedding.model,
        "embedding.dim": cfg.embedding.dim,
        "embedding.fixtures": cfg.embedding.fixtures,
        "embedding.cache_path": cfg.embedding.cache_path,
        "llm.kind": cfg.llm.kind,
        "llm.endpoint": cfg.llm.endpoint,
        "llm.model": cfg.llm.model,
        "llm.temperature": cfg.llm.temperature,
        "llm.max_output": cfg.llm.max_output,
        "llm.fixtures": cfg.llm.fixtures,
        "matcher.strategy": cfg.matcher.strategy,
        "matcher.top_k": cfg.matcher.top_k,
        "matcher.beam_width": cfg.matcher.beam_width,
        "matcher.max_len": cfg.matcher.max_len,
        "matcher.frontier_cap": cfg.matcher.frontier_cap,
        "matcher.exact_mode": cfg.matcher.exact_mode,
        "planner.relation_cap": cfg.planner.relation_cap,
        "planner.per_relation_k": cfg.planner.per_relation_k,
        "reasoner.batch_limit": cfg.reasoner.batch_limit,
        "eval.mode": cfg.eval.mode,
    }
    assert not set(values) & _EXECUTION_ONLY_KEYS
    canonical = "\n".join(f"{key}={values[key]}" for key in sorted(values))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
