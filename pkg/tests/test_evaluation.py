import json
import random
from types import SimpleNamespace

import pytest

from karpa.errors import DataError
from karpa.evaluation import (
    EvalReport,
    QASample,
    evaluate,
    load_dataset,
    render_report,
    render_summary_tsv,
    score_sample,
)
from karpa.llm import UsageLedger
from karpa.reasoner import AnswerSet


def answer_set(*surfaces, ungrounded=()):
    a = AnswerSet()
    for s in surfaces:
        a.add(s, 0)
    a.ungrounded = set(ungrounded)
    return a


# -- dataset loading --------------------------------------------------------------


def test_simple_loader_maps_fields(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(
        json.dumps({"id": "q1", "question": "Who?", "topics": ["T"], "answers": [["a"], ["b", "B"]]})
        + "\n",
        encoding="utf-8",
    )
    (sample,) = load_dataset(path, "simple")
    assert sample.id == "q1"
    assert sample.topic_entities == ["T"]
    assert len(sample.gold_answers) == 2


def test_simple_loader_missing_field_reports_index(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "q1", "question": "Who?", "topics": ["T"]}\n', encoding="utf-8")
    with pytest.raises(DataError) as exc:
        load_dataset(path, "simple")
    assert "record 0" in str(exc.value)


def test_loader_order_preserving(tmp_path):
    path = tmp_path / "data.jsonl"
    lines = [
        json.dumps({"id": f"q{i}", "question": "?", "topics": ["T"], "answers": [["a"]]})
        for i in range(5)
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    samples = load_dataset(path, "simple")
    assert [s.id for s in samples] == [f"q{i}" for i in range(5)]


def test_unknown_format_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{}", encoding="utf-8")
    with pytest.raises(DataError):
        load_dataset(path, "freebase")


def test_webqsp_loader(tmp_path):
    payload = {
        "Questions": [
            {
                "QuestionId": "WebQTest-1",
                "RawQuestion": "where is X?",
                "ProcessedQuestion": "where is x",
                "Parses": [
                    {
                        "TopicEntityName": "X",
                        "Answers": [
                            {"EntityName": "Y", "AnswerArgument": "m.123"},
                            {"EntityName": None, "AnswerArgument": "1984"},
                        ],
                    }
                ],
            }
        ]
    }
    path = tmp_path / "webqsp.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    (sample,) = load_dataset(path, "webqsp")
    assert sample.question == "where is x"
    assert sample.topic_entities == ["X"]
    assert sample.gold_answers == [["Y"], ["1984"]]


def test_cwq_loader(tmp_path):
    payload = [
        {
            "ID": "cwq-1",
            "question": "which country?",
            "topic_entity": {"m.01": "France"},
            "answers": [{"answer": "Paris", "aliases": ["City of Light"]}],
        }
    ]
    path = tmp_path / "cwq.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    (sample,) = load_dataset(path, "cwq")
    assert sample.topic_entities == ["France"]
    assert sample.gold_answers == [["Paris", "City of Light"]]


# -- score_sample -------------------------------------------------------------------


def test_perfect_single_answer():
    s = score_sample(answer_set("a"), [["a"]])
    assert (s.hit1, s.precision, s.recall, s.f1, s.exact) == (1, 1.0, 1.0, 1.0, 1)


def test_half_precision_half_recall():
    s = score_sample(answer_set("a", "b"), [["a"], ["c"]])
    assert s.hit1 == 1
    assert s.precision == pytest.approx(0.5)
    assert s.recall == pytest.approx(0.5)
    assert s.f1 == pytest.approx(0.5)
    assert s.exact == 0


def test_empty_prediction_scores_zero():
    s = score_sample(answer_set(), [["a"]])
    assert (s.hit1, s.precision, s.recall, s.f1, s.exact) == (0, 0.0, 0.0, 0.0, 0)


def test_alias_match_counts():
    s = score_sample(answer_set("city of light"), [["Paris", "City of Light"]])
    assert s.hit1 == 1 and s.recall == 1.0


def test_normalization_trims_folds_collapses():
    s = score_sample(answer_set("  KENYAN   shilling "), [["Kenyan shilling"]])
    assert s.hit1 == 1 and s.f1 == 1.0


def test_strict_mode_drops_ungrounded():
    pred = answer_set("a", "ghost", ungrounded=["ghost"])
    strict = score_sample(pred, [["a"]], mode="strict")
    lenient = score_sample(pred, [["a"]], mode="lenient")
    assert strict.precision == 1.0 and strict.exact == 1
    assert lenient.precision == pytest.approx(0.5) and lenient.exact == 0


def test_strict_predictions_subset_of_lenient():
    rng = random.Random(5)
    for _ in range(50):
        surfaces = [f"ans{i}" for i in range(rng.randint(0, 6))]
        ungrounded = {s for s in surfaces if rng.random() < 0.5}
        pred = answer_set(*surfaces, ungrounded=ungrounded)
        strict = [n for n in pred.normalized() if n not in pred.ungrounded]
        assert set(strict) <= set(pred.normalized())


def test_exact_requires_bijection():
    # two predictions, one gold: not exact even though everything matches
    s = score_sample(answer_set("paris", "city of light"), [["Paris", "City of Light"]])
    assert s.exact == 0
    # one prediction per gold, via aliases
    s2 = score_sample(answer_set("paris", "london"), [["Paris"], ["London"]])
    assert s2.exact == 1


def test_f1_identity_and_bounds_thousand_cases():
    rng = random.Random(424242)
    for _ in range(1000):
        n_pred = rng.randint(0, 6)
        n_gold = rng.randint(1, 6)
        universe = [f"e{i}" for i in range(8)]
        preds = rng.sample(universe, n_pred)
        golds = [[rng.choice(universe)] for _ in range(n_gold)]
        s = score_sample(answer_set(*preds), golds)
        if s.precision + s.recall > 0:
            assert s.f1 == pytest.approx(
                2 * s.precision * s.recall / (s.precision + s.recall), abs=1e-12
            )
        else:
            assert s.f1 == 0.0
        for v in (s.precision, s.recall, s.f1):
            assert 0.0 <= v <= 1.0
        assert s.hit1 in (0, 1) and s.exact in (0, 1)


def test_gold_must_be_non_empty():
    with pytest.raises(DataError):
        score_sample(answer_set("a"), [])


# -- evaluate -----------------------------------------------------------------------


def outcome(answers, calls=3):
    ledger = UsageLedger()
    from karpa.llm import CompletionResult

    for _ in range(calls):
        ledger.record("reasoning", CompletionResult("x", 10, 5, estimated=True))
    return SimpleNamespace(
        answers=answers, usage_snapshot=ledger.snapshot(), trace=[{"event": "t"}], flags=[]
    )


def sample(i, gold):
    return QASample(id=f"q{i}", question="?", topic_entities=["T"], gold_answers=gold)


def test_aggregate_is_mean_of_samples():
    samples = [sample(1, [["a"]]), sample(2, [["b"]])]

    def runner(s):
        return outcome(answer_set("a"))  # right for q1, wrong for q2

    report = evaluate(samples, runner)
    assert report.aggregates["f1"] == pytest.approx(0.5)
    assert report.aggregates["hit1"] == pytest.approx(0.5)
    assert report.aggregates["calls_per_question"] == pytest.approx(3.0)


def test_per_sample_failure_becomes_zero_score():
    samples = [sample(1, [["a"]]), sample(2, [["b"]])]

    def runner(s):
        if s.id == "q2":
            raise RuntimeError("pipeline exploded")
        return outcome(answer_set("a"))

    report = evaluate(samples, runner)
    assert report.aggregates["errors"] == 1
    assert report.records[1].error == "RuntimeError: pipeline exploded"
    assert report.records[1].score.f1 == 0.0
    assert report.aggregates["hit1"] == pytest.approx(0.5)


def test_checkpoint_resume_skips_runner(tmp_path):
    samples = [sample(1, [["a"]])]
    calls = {"n": 0}

    def runner(s):
        calls["n"] += 1
        return outcome(answer_set("a"))

    kwargs = dict(checkpoint_dir=tmp_path, config_digest="abc123")
    first = evaluate(samples, runner, **kwargs)
    second = evaluate(samples, runner, **kwargs)
    assert calls["n"] == 1
    assert render_report(first) == render_report(second)
    # a different config digest invalidates the checkpoint
    evaluate(samples, runner, checkpoint_dir=tmp_path, config_digest="other")
    assert calls["n"] == 2


def test_checkpoint_writes_trace_file(tmp_path):
    samples = [sample(7, [["a"]])]
    evaluate(samples, lambda s: outcome(answer_set("a")), checkpoint_dir=tmp_path, config_digest="d")
    traces = list(tmp_path.glob("*.trace.jsonl"))
    assert len(traces) == 1
    event = json.loads(traces[0].read_text(encoding="utf-8").splitlines()[0])
    assert event["event"] == "t"


def test_concurrent_equals_sequential():
    samples = [sample(i, [["a"]]) for i in range(8)]

    def runner(s):
        return outcome(answer_set("a" if int(s.id[1]) % 2 == 0 else "z"))

    sequential = evaluate(samples, runner, concurrency=1)
    concurrent = evaluate(samples, runner, concurrency=4)
    assert render_report(sequential) == render_report(concurrent)


def test_report_rendering_shape():
    report = evaluate([sample(1, [["a"]])], lambda s: outcome(answer_set("a")), config_digest="cfg1")
    text = render_report(report)
    assert text.startswith("karpa evaluation report\nconfig_digest: cfg1\n")
    assert "== per-sample ==" in text and "== aggregates ==" in text and "== usage ==" in text
    tsv = render_summary_tsv(report)
    assert "f1\t1.0" in tsv
    assert all(len(line.split("\t")) == 2 for line in tsv.strip().splitlines())


def test_mode_recorded_in_report():
    report = evaluate([sample(1, [["a"]])], lambda s: outcome(answer_set("a")), mode="lenient")
    assert isinstance(report, EvalReport)
    assert "mode: lenient" in render_report(report)
