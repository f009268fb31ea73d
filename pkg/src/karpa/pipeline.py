"""End-to-end question answering: plan, pool, re-plan, match, reason.

One run produces an answer set plus a full trace (line-JSON-ready event
dicts) and a usage snapshot from a ledger private to that run, so
concurrent evaluation needs no shared mutable state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .config import PipelineConfig
from .embeddings import (
    EmbeddingCache,
    EmbeddingGateway,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    ScriptedEmbeddingProvider,
)
from .errors import ConfigError, NotFoundError, ParseError
from .evaluation import QASample
from .kg import KnowledgeGraph, load_triples_path
from .llm import (
    CannedChatProvider,
    HttpChatProvider,
    LlmGateway,
    LlmParams,
    ScriptedChatProvider,
    UsageLedger,
    digest_messages,
)
from .matching import RelationPath, ScoredPath, match_candidates
from .planner import (
    CandidatePathSet,
    Query,
    build_initial_prompt,
    build_replanning_prompt,
    extract_relation_pool,
    parse_path_sets,
    replan,
)
from .reasoner import AnswerSet, answer_question

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    answers: AnswerSet
    trace: list[dict]
    usage_snapshot: dict
    flags: list[str] = field(default_factory=list)
    selected: list[ScoredPath] = field(default_factory=list)


def build_embedding_gateway(cfg: PipelineConfig) -> EmbeddingGateway:
    import os

    opts = cfg.embedding
    if opts.kind == "mock":
        provider = MockEmbeddingProvider(dim=opts.dim)
    elif opts.kind == "scripted":
        if not opts.fixtures:
            raise ConfigError("embedding.fixtures is required for scripted embeddings")
        provider = ScriptedEmbeddingProvider.from_file(opts.fixtures)
    else:
        if not opts.endpoint:
            raise ConfigError("embedding.endpoint is required for http embeddings")
        provider = HttpEmbeddingProvider(
            opts.endpoint, opts.model, api_key=os.environ.get("KARPA_EMBED_API_KEY")
        )
    cache = EmbeddingCache(opts.cache_path or None)
    return EmbeddingGateway(provider, cache)


def build_chat_provider(cfg: PipelineConfig):
    import os

    opts = cfg.llm
    if opts.kind == "mock":
        return CannedChatProvider()
    if opts.kind == "scripted":
        if not opts.fixtures:
            raise ConfigError("llm.fixtures is required for scripted chat")
        return ScriptedChatProvider.from_file(opts.fixtures)
    if not opts.endpoint:
        raise ConfigError("llm.endpoint is required for http chat")
    return HttpChatProvider(opts.endpoint, api_key=os.environ.get("KARPA_LLM_API_KEY"))


def load_graph(cfg: PipelineConfig) -> KnowledgeGraph:
    if not cfg.kg.path:
        raise ConfigError("kg.path is not configured")
    g = load_triples_path(cfg.kg.path)
    logger.info(
        "loaded graph: %d entities, %d relations, %d triples",
        g.num_entities,
        g.num_relations,
        len(g),
    )
    return g


class Pipeline:
    """Reusable pipeline over one graph and one pair of providers."""

    def __init__(self, cfg: PipelineConfig, g: KnowledgeGraph, embedder: EmbeddingGateway, chat_provider):
        self.cfg = cfg
        self.g = g
        self.embedder = embedder
        self.chat_provider = chat_provider
        self.vocab = g.relation_vocabulary()
        self.params = LlmParams(
            model=cfg.llm.model,
            temperature=cfg.llm.temperature,
            max_output=cfg.llm.max_output,
        )

    def run(self, query: Query) -> PipelineResult:
        ledger = UsageLedger()
        llm = LlmGateway(self.chat_provider, ledger)
        trace: list[dict] = []
        flags: list[str] = []

        topic_ids = []
        unresolved = []
        for label in query.topic_entities:
            eid = self.g.entity_id(label)
            if eid is None:
                unresolved.append(label)
            else:
                topic_ids.append(eid)
        trace.append(
            {"event": "resolve", "topics": list(query.topic_entities), "unresolved": unresolved}
        )
        if unresolved:
            flags.append("unresolved_topics")
        if not topic_ids:
            flags.append("no_resolvable_topic")
            trace.append({"event": "flags", "flags": flags})
            return PipelineResult(AnswerSet(), trace, ledger.snapshot(), flags)

        initial = self._initial_plan(query, llm, trace, flags)
        candidates, pool_list = self._replan(query, initial, llm, trace, flags)
        selected = self._match(topic_ids, candidates, trace)
        trace.append(
            {
                "event": "selected",
                "count": len(selected),
                "paths": [self._path_dict(p) for p in selected],
            }
        )

        if not selected:
            flags.append("no_paths_matched")
            trace.append({"event": "flags", "flags": flags})
            return PipelineResult(AnswerSet(), trace, ledger.snapshot(), flags)

        answers = self._reason(query, selected, llm, trace)
        trace.append({"event": "answers", **answers.as_dict()})
        trace.append({"event": "flags", "flags": flags})
        return PipelineResult(answers, trace, ledger.snapshot(), flags, selected)

    # -- phases ----------------------------------------------------------

    def _initial_plan(self, query, llm, trace, flags) -> CandidatePathSet:
        messages = build_initial_prompt(query)
        result = llm.complete(messages, self.params, phase="initial_planning")
        trace.append(
            {
                "event": "initial_planning",
                "prompt_digest": digest_messages(messages),
                "raw": result.text,
            }
        )
        try:
            initial = parse_path_sets(result.text)
        except ParseError:
            flags.append("initial_parse_error")
            initial = CandidatePathSet(by_length={n: [] for n in (1, 2, 3)}, raw_llm_text=result.text)
        if initial.inconsistent:
            flags.append("initial_inconsistent")
        trace.append(
            {
                "event": "initial_paths",
                "paths": {str(k): [list(p.relations) for p in v] for k, v in initial.by_length.items()},
            }
        )
        return initial

    def _replan(self, query, initial, llm, trace, flags) -> tuple[list[RelationPath], list[str]]:
        pool = extract_relation_pool(
            initial,
            self.vocab,
            self.embedder,
            per_relation_k=self.cfg.planner.per_relation_k,
            cap=self.cfg.planner.relation_cap,
        )
        trace.append({"event": "relation_pool", "pool": list(pool.pool)})
        if not pool.pool:
            flags.append("fallback_initial")
            return initial.all_paths(), pool.pool
        candidate_set = replan(query, pool, llm, self.params, self.embedder, self.vocab)
        trace.append(
            {
                "event": "replanning",
                "prompt_digest": digest_messages(build_replanning_prompt(query, pool)),
                "raw": candidate_set.raw_llm_text,
                "paths": {
                    str(k): [list(p.relations) for p in v]
                    for k, v in candidate_set.by_length.items()
                },
                "snaps": [list(s) for s in candidate_set.snaps],
            }
        )
        if candidate_set.snaps:
            flags.append("snapped_relations")
        if candidate_set.inconsistent:
            flags.append("replan_inconsistent")
        if candidate_set.is_empty():
            flags.append("fallback_initial")
            return initial.all_paths(), pool.pool
        return candidate_set.all_paths(), pool.pool

    def _match(self, topic_ids, candidates, trace) -> list[ScoredPath]:
        if not candidates:
            return []
        best: dict[tuple[int, tuple], ScoredPath] = {}
        for topic_id in topic_ids:
            matched = match_candidates(self.g, topic_id, candidates, self.cfg.matcher, self.embedder)
            trace.append(
                {
                    "event": "matching",
                    "topic": self.g.entity_label(topic_id),
                    "strategy": self.cfg.matcher.strategy,
                    "count": len(matched),
                    "truncated": any(p.truncated for p in matched),
                }
            )
            for scored in matched:
                key = (scored.path.start, scored.path.steps)
                current = best.get(key)
                if current is None or scored.score > current.score:
                    best[key] = scored
        merged = sorted(
            best.values(),
            key=lambda sp: (-sp.score, sp.relation_path.relations, sp.path.entities()),
        )
        return merged[: self.cfg.matcher.top_k]

    def _reason(self, query, selected, llm, trace) -> AnswerSet:
        limit = self.cfg.reasoner.batch_limit
        batches = [selected[i : i + limit] for i in range(0, len(selected), limit)]
        answers = answer_question(
            query, selected, self.g, llm, self.params, batch_limit=limit, trace=trace
        )
        trace.append({"event": "reasoning", "batches": len(batches)})
        return answers

    def _path_dict(self, scored: ScoredPath) -> dict:
        return {
            "score": scored.score,
            "cost": scored.cost,
            "relations": list(scored.relation_path.relations),
            "entities": [self.g.entity_label(e) for e in scored.path.entities()],
            "truncated": scored.truncated,
        }


def run_pipeline(query: Query, cfg: PipelineConfig) -> PipelineResult:
    """Convenience single-question entry point: builds everything from config."""
    g = load_graph(cfg)
    embedder = build_embedding_gateway(cfg)
    provider = build_chat_provider(cfg)
    return Pipeline(cfg, g, embedder, provider).run(query)


def make_sample_runner(pipeline: Pipeline):
    """Adapter for the evaluation harness: QASample in, PipelineResult out."""

    def run(sample: QASample) -> PipelineResult:
        if not sample.topic_entities:
            raise NotFoundError(f"sample {sample.id} has no topic entities")
        query = Query(
            id=sample.id,
            question=sample.question,
            topic_entities=tuple(sample.topic_entities),
        )
        return pipeline.run(query)

    return run
