"""Dataset loading, answer scoring, and the evaluation runner.

Scoring is surface-level: a prediction matches a gold answer when its
normalized form equals any of that answer's aliases. Per-sample metrics
are macro-averaged. The report deliberately contains no timestamps or
host-specific state, so a rerun with the same configuration is
byte-identical, whether samples ran sequentially or concurrently.

"Accuracy" is reported twice under explicit names — ``accuracy_exact``
(exact set match ratio) and ``accuracy_recall`` (macro recall) — because
the headline metric name alone does not pin down a formula.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import DataError
from .llm import UsageLedger
from .reasoner import AnswerSet, normalize_answer

_FORMATS = ("simple", "webqsp", "cwq")
_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]+")


@dataclass
class QASample:
    id: str
    question: str
    topic_entities: list[str]
    gold_answers: list[list[str]]  # one alias list per gold answer

    def __post_init__(self):
        if not self.gold_answers:
            raise DataError(f"sample {self.id}: gold answers must be non-empty")


@dataclass
class SampleScore:
    hit1: int
    precision: float
    recall: float
    f1: float
    exact: int
    predicted: AnswerSet


@dataclass
class SampleRecord:
    sample_id: str
    score: SampleScore
    usage: dict
    flags: list[str] = field(default_factory=list)
    error: str | None = None


@dataclass
class EvalReport:
    records: list[SampleRecord]
    aggregates: dict
    usage: dict
    config_digest: str
    mode: str


# -- dataset loading ------------------------------------------------------


def _sample_from_simple(obj: dict, index: int) -> QASample:
    try:
        return QASample(
            id=str(obj["id"]),
            question=obj["question"],
            topic_entities=[str(t) for t in obj["topics"]],
            gold_answers=[[str(a) for a in aliases] for aliases in obj["answers"]],
        )
    except KeyError as exc:
        raise DataError(f"record {index}: missing field {exc}") from exc


def _sample_from_webqsp(obj: dict, index: int) -> QASample:
    try:
        question = obj.get("ProcessedQuestion") or obj["RawQuestion"]
        sample_id = str(obj["QuestionId"])
        topics: list[str] = []
        answers: dict[str, list[str]] = {}
        for parse in obj["Parses"]:
            name = parse.get("TopicEntityName")
            if name and name not in topics:
                topics.append(name)
            for ans in parse.get("Answers", []):
                label = ans.get("EntityName") or ans.get("AnswerArgument")
                if label and label not in answers:
                    answers[label] = [label]
        return QASample(sample_id, question, topics, list(answers.values()))
    except KeyError as exc:
        raise DataError(f"record {index}: missing field {exc}") from exc


def _sample_from_cwq(obj: dict, index: int) -> QASample:
    try:
        sample_id = str(obj["ID"])
        question = obj["question"]
        if "topic_entity" in obj and isinstance(obj["topic_entity"], dict):
            topics = list(obj["topic_entity"].values())
        elif "topic_entity_name" in obj:
            topics = [obj["topic_entity_name"]]
        else:
            raise DataError(f"record {index}: no topic entity field")
        answers = []
        for ans in obj["answers"]:
            aliases = [ans["answer"]] + [a for a in ans.get("aliases", [])]
            answers.append(aliases)
        return QASample(sample_id, question, topics, answers)
    except KeyError as exc:
        raise DataError(f"record {index}: missing field {exc}") from exc


def load_dataset(path: str | Path, format: str = "simple") -> list[QASample]:
    """Load QA samples, order-preserving.

    ``simple`` is this package's own line-JSON format
    ``{"id", "question", "topics": [...], "answers": [[alias...]...]}``;
    ``webqsp`` and ``cwq`` accept those datasets' published JSON layouts.
    """
    if format not in _FORMATS:
        raise DataError(f"unknown dataset format {format!r}; expected one of {_FORMATS}")
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset not found: {p}")
    samples: list[QASample] = []
    if format == "simple":
        with p.open("r", encoding="utf-8") as fp:
            for index, line in enumerate(fp):
                line = line.strip()
                if not line:
                    continue
                samples.append(_sample_from_simple(json.loads(line), index))
        return samples
    payload = json.loads(p.read_text(encoding="utf-8"))
    if format == "webqsp":
        records = payload["Questions"] if isinstance(payload, dict) else payload
        return [_sample_from_webqsp(obj, i) for i, obj in enumerate(records)]
    records = payload if isinstance(payload, list) else payload.get("data", [])
    return [_sample_from_cwq(obj, i) for i, obj in enumerate(records)]


# -- scoring --------------------------------------------------------------


def _bipartite_match_size(preds: list[str], golds: list[set[str]]) -> int:
    """Maximum matching between predictions and gold alias sets."""
    assigned: dict[int, int] = {}  # gold index -> pred index

    def try_assign(pred_index: int, pred: str, visited: set[int]) -> bool:
        for gold_index, aliases in enumerate(golds):
            if pred in aliases and gold_index not in visited:
                visited.add(gold_index)
                if gold_index not in assigned or try_assign(
                    assigned[gold_index], preds[assigned[gold_index]], visited
                ):
                    assigned[gold_index] = pred_index
                    return True
        return False

    for pred_index, pred in enumerate(preds):
        try_assign(pred_index, pred, set())
    return len(assigned)


def score_sample(pred: AnswerSet, gold: list[list[str]], mode: str = "strict") -> SampleScore:
    """Hit@1, precision, recall, F1, and exact set match for one sample.

    ``strict`` drops ungrounded predictions before scoring; ``lenient``
    keeps them. Matching is normalized string equality against any alias.
    """
    if mode not in ("strict", "lenient"):
        raise DataError(f"unknown scoring mode {mode!r}")
    if not gold:
        raise DataError("gold answers must be non-empty")
    normalized = pred.normalized()
    if mode == "strict":
        normalized = [n for n in normalized if n not in pred.ungrounded]
    # dedup, preserving order
    preds = list(dict.fromkeys(normalized))
    golds = [{normalize_answer(alias) for alias in aliases} for aliases in gold]

    matched_preds = sum(1 for p in preds if any(p in aliases for aliases in golds))
    matched_golds = sum(1 for aliases in golds if any(p in aliases for p in preds))
    precision = matched_preds / len(preds) if preds else 0.0
    recall = matched_golds / len(golds)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    hit1 = 1 if matched_preds > 0 else 0
    exact = int(len(preds) == len(golds) and _bipartite_match_size(preds, golds) == len(golds))
    return SampleScore(hit1, precision, recall, f1, exact, pred)


# -- evaluation runner ----------------------------------------------------


def _checkpoint_name(sample_id: str) -> str:
    import hashlib

    safe = _SAFE_ID.sub("_", sample_id) or "sample"
    suffix = hashlib.sha256(sample_id.encode("utf-8")).hexdigest()[:8]
    return f"{safe}-{suffix}"


def _write_checkpoint(directory: Path, sample_id: str, payload: dict, trace: list[dict]) -> None:
    base = directory / _checkpoint_name(sample_id)
    with (base.parent / (base.name + ".trace.jsonl")).open("w", encoding="utf-8") as fp:
        for event in trace:
            fp.write(json.dumps(event, ensure_ascii=False, sort_keys=True) + "\n")
    with (base.parent / (base.name + ".json")).open("w", encoding="utf-8") as fp:
        json.dump(payload, fp, ensure_ascii=False, sort_keys=True)


def _read_checkpoint(directory: Path, sample_id: str, config_digest: str) -> dict | None:
    path = directory / (_checkpoint_name(sample_id) + ".json")
    if not path.exists():
        return None
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if payload.get("config_digest") != config_digest:
        return None
    return payload


def evaluate(
    samples: list[QASample],
    runner: Callable,
    *,
    mode: str = "strict",
    concurrency: int = 1,
    checkpoint_dir: str | Path | None = None,
    config_digest: str = "",
) -> EvalReport:
    """Run the pipeline over every sample and aggregate macro metrics.

    ``runner(sample)`` must return an object with ``answers`` (AnswerSet),
    ``usage_snapshot`` (dict), ``trace`` (list of dicts), and ``flags``
    (list of str). Per-sample failures become zero-score records with an
    error annotation; the run continues. With a checkpoint directory the
    run is resumable: samples whose checkpoint matches the config digest
    are not re-run.
    """
    directory = Path(checkpoint_dir) if checkpoint_dir else None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)

    def run_one(sample: QASample) -> dict:
        if directory is not None:
            cached = _read_checkpoint(directory, sample.id, config_digest)
            if cached is not None:
                return cached
        payload: dict
        try:
            outcome = runner(sample)
            payload = {
                "config_digest": config_digest,
                "answers": outcome.answers.as_dict(),
                "usage": outcome.usage_snapshot,
                "flags": list(outcome.flags),
                "error": None,
            }
            trace = outcome.trace
        except Exception as exc:  # per-sample isolation is the contract here
            payload = {
                "config_digest": config_digest,
                "answers": AnswerSet().as_dict(),
                "usage": UsageLedger().snapshot(),
                "flags": [],
                "error": f"{type(exc).__name__}: {exc}",
            }
            trace = [{"event": "error", "detail": payload["error"]}]
        if directory is not None:
            _write_checkpoint(directory, sample.id, payload, trace)
        return payload

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            payloads = list(pool.map(run_one, samples))
    else:
        payloads = [run_one(sample) for sample in samples]

    ledger = UsageLedger()
    records: list[SampleRecord] = []
    for sample, payload in zip(samples, payloads):
        answers = AnswerSet.from_dict(payload["answers"])
        score = score_sample(answers, sample.gold_answers, mode=mode)
        ledger.merge_snapshot(payload["usage"])
        records.append(
            SampleRecord(
                sample_id=sample.id,
                score=score,
                usage=payload["usage"],
                flags=payload["flags"],
                error=payload["error"],
            )
        )

    n = len(records)
    usage = ledger.snapshot()

    def mean(values: list[float]) -> float:
        return sum(values) / n if n else 0.0

    aggregates = {
        "samples": n,
        "errors": sum(1 for r in records if r.error),
        "hit1": mean([r.score.hit1 for r in records]),
        "precision": mean([r.score.precision for r in records]),
        "recall": mean([r.score.recall for r in records]),
        "f1": mean([r.score.f1 for r in records]),
        "accuracy_exact": mean([r.score.exact for r in records]),
        "accuracy_recall": mean([r.score.recall for r in records]),
        "calls_per_question": mean([r.usage["calls"] for r in records]),
        "prompt_tokens_per_question": mean([r.usage["prompt_tokens"] for r in records]),
        "completion_tokens_per_question": mean([r.usage["completion_tokens"] for r in records]),
    }
    return EvalReport(
        records=records,
        aggregates=aggregates,
        usage=usage,
        config_digest=config_digest,
        mode=mode,
    )


# -- report rendering -----------------------------------------------------


def _record_as_dict(record: SampleRecord) -> dict:
    return {
        "id": record.sample_id,
        "hit1": record.score.hit1,
        "precision": record.score.precision,
        "recall": record.score.recall,
        "f1": record.score.f1,
        "exact": record.score.exact,
        "predicted": record.score.predicted.as_dict(),
        "usage": record.usage,
        "flags": record.flags,
        "error": record.error,
    }


def render_report(report: EvalReport) -> str:
    """Single-document report: header, per-sample line-JSON, aggregate block."""
    lines = [
        "karpa evaluation report",
        f"config_digest: {report.config_digest}",
        f"mode: {report.mode}",
        "averaging: macro (per-sample arithmetic mean)",
        f"samples: {len(report.records)}",
        "== per-sample ==",
    ]
    for record in report.records:
        lines.append(json.dumps(_record_as_dict(record), ensure_ascii=False, sort_keys=True))
    lines.append("== aggregates ==")
    lines.append(json.dumps(report.aggregates, ensure_ascii=False, sort_keys=True))
    lines.append("== usage ==")
    lines.append(json.dumps(report.usage, ensure_ascii=False, sort_keys=True))
    return "\n".join(lines) + "\n"


def render_summary_tsv(report: EvalReport) -> str:
    lines = [f"{metric}\t{value}" for metric, value in sorted(report.aggregates.items())]
    return "\n".join(lines) + "\n"
