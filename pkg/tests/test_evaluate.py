import json

import pytest

from tabtextqa.backends import MockBackend
from tabtextqa.errors import MismatchedCorpus, MissingTrace
from tabtextqa.evaluate import (
    EvalReport,
    compare_ablations,
    evaluate_run,
    exact_match,
    hit_at_k,
    normalize_answer,
    retrieval_units,
    token_f1,
)
from tabtextqa.retrieve import RetrievalResult, RowCandidate, retrieve


@pytest.mark.parametrize("raw,norm", [
    ("The Rugby League 3.", "rugby league 3"),
    ("16 March 2010", "16 march 2010"),
    ("", ""),
    ("  A  cat,\tan   owl ", "cat owl"),
    ("Beat 'em up", "beat em up"),
    ("The", ""),
])
def test_normalize(raw, norm):
    assert normalize_answer(raw) == norm


def test_exact_match_examples():
    assert exact_match("rugby league 3", "Rugby League 3") == 1
    assert exact_match("Rugby League 2", "Rugby League 3") == 0
    assert exact_match("", "x") == 0


def test_f1_examples():
    assert token_f1("March 2010", "16 March 2010") == pytest.approx(0.8, abs=1e-12)
    assert token_f1("same words", "same words") == 1.0
    assert token_f1("abc", "xyz") == 0.0
    assert token_f1("", "") == 1.0
    assert token_f1("", "x") == 0.0


def _retrieval(rows):
    return RetrievalResult("q1", rows=tuple(RowCandidate("t1", i, s, 1.0 - i / 10) for i, s in rows))


def test_retrieval_units_include_linked_passages(toy_corpus):
    r = _retrieval([(0, "Name is Alice Smith.")])
    (unit,) = retrieval_units(r, toy_corpus)
    assert "born in Dover" in unit and "Elm Park" in unit


def test_hit_at_k(toy_corpus):
    r = _retrieval([(1, "Name is Bob Jones."), (0, "Name is Alice Smith.")])
    assert not hit_at_k(r, "Dover", 1, toy_corpus)
    assert hit_at_k(r, "Dover", 3, toy_corpus)
    assert hit_at_k(r, "bob jones", 1, toy_corpus)
    # token-run containment, not substring: "Dov" does not hit
    assert not hit_at_k(r, "Dov", 3, toy_corpus)
    assert not hit_at_k(r, "", 3, toy_corpus)


def _traces(answers):
    return [{"question_id": qid, "final_answer": a, "failed_stage": None} for qid, a in answers.items()]


def test_evaluate_run_aggregates(golden_corpus):
    answers = {"g01": "March 2010", "g02": "583,756"}
    report = evaluate_run(_traces(answers), [], golden_corpus, question_ids=list(answers))
    assert report.em == pytest.approx(50.0)
    assert report.f1 == pytest.approx((0.8 + 1.0) / 2 * 100)
    assert [r.question_id for r in report.results] == ["g01", "g02"]
    assert report.summary_line() == "EM 50.00 / F1 90.00 / HIT@1 0.00 / HIT@3 0.00"


def test_failed_questions_score_zero(golden_corpus):
    traces = [{"question_id": "g01", "final_answer": "16 March 2010", "failed_stage": "main_qa"}]
    report = evaluate_run(traces, [], golden_corpus)
    assert report.results[0].prediction == "" and report.em == 0.0
    assert report.failures == {"main_qa": 1}


def test_missing_traces_listed(golden_corpus):
    with pytest.raises(MissingTrace) as info:
        evaluate_run(_traces({"g01": "x"}), [], golden_corpus, question_ids=["g01", "g02", "g03"])
    assert "g02" in str(info.value) and "g03" in str(info.value)


def test_empty_run_is_error(golden_corpus):
    with pytest.raises(ValueError):
        evaluate_run([], [], golden_corpus)


def test_report_serialization_deterministic(golden_corpus):
    answers = {"g02": "a", "g01": "16 March 2010"}
    retrievals = [retrieve(MockBackend(), golden_corpus.question(q), golden_corpus).to_dict() for q in answers]
    a = evaluate_run(_traces(answers), retrievals, golden_corpus, config={"k": 1})
    b = evaluate_run(list(reversed(_traces(answers))), list(reversed(retrievals)), golden_corpus, config={"k": 1})
    assert a.to_json() == b.to_json()
    again = EvalReport.from_dict(json.loads(a.to_json()))
    assert again.to_json() == a.to_json()
    assert len(a.to_jsonl().splitlines()) == 2
    assert "EM / F1" in a.to_text()


def test_hit_implies_hit3_in_report(golden_corpus):
    ids = [q.id for q in golden_corpus.questions]
    retrievals = [retrieve(MockBackend(), golden_corpus.question(q), golden_corpus) for q in ids]
    report = evaluate_run(_traces({q: "" for q in ids}), retrievals, golden_corpus)
    assert all(r.hit3 or not r.hit1 for r in report.results)


def test_compare_ablations(golden_corpus):
    mk = lambda answers, label: evaluate_run(_traces(answers), [], golden_corpus, label=label)
    base = mk({"g01": "x", "g02": "583,756"}, "standard")
    better = mk({"g01": "16 March 2010", "g02": "583,756"}, "ttqa_rs")
    table = compare_ablations([base, better])
    assert [r["label"] for r in table.rows] == ["standard", "ttqa_rs"]
    assert table.rows[1]["delta"]["EM"] == pytest.approx(50.0)
    assert "deltas vs standard" in table.to_text()
    assert compare_ablations([base, better], baseline="ttqa_rs").rows[0]["delta"]["EM"] == pytest.approx(-50.0)


def test_compare_ablations_rejects_mixed_corpora(golden_corpus, toy_corpus):
    a = evaluate_run(_traces({"g01": "x"}), [], golden_corpus)
    b = evaluate_run(_traces({"q1": "Dover"}), [], toy_corpus)
    with pytest.raises(MismatchedCorpus):
        compare_ablations([a, b])
