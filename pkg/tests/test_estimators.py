import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tabtextqa import BreakdownReader, RowLinearizer, TableTextQA, TableTextRetriever
from tabtextqa.backends import MockBackend


@pytest.mark.parametrize("cls,params", [
    (RowLinearizer, {"mode": "raw", "include_title": True}),
    (TableTextRetriever, {"alpha": 0.5, "k_rows": 2, "k_final": 2}),
    (BreakdownReader, {"mode": "cot", "shots": 1}),
    (TableTextQA, {"mode": "ltm", "k_text": 4, "self_consistency_samples": 3}),
])
def test_params_roundtrip_and_clone(cls, params):
    est = cls(**params)
    got = est.get_params()
    assert all(got[k] == v for k, v in params.items())
    twin = clone(est)
    assert twin is not est and twin.get_params() == got
    key = next(iter(params))
    assert est.set_params(**{key: got[key]}) is est
    with pytest.raises(ValueError):
        est.set_params(no_such_param=1)


def test_row_linearizer(toy_corpus):
    out = RowLinearizer().fit().transform(toy_corpus.tables)
    assert out[0][0].startswith("Name is Alice Smith")
    with pytest.raises(ValueError):
        RowLinearizer(mode="generative").fit()


def test_unfitted_predict_raises(golden_corpus):
    with pytest.raises(NotFittedError):
        TableTextQA(MockBackend()).predict(["g01"])
    with pytest.raises(ValueError):
        TableTextQA().fit(golden_corpus)


def test_end_to_end_golden(golden_corpus, golden_mock, golden_expected):
    qa = TableTextQA(golden_mock()).fit(golden_corpus)
    ids = [q.id for q in golden_corpus.questions]
    preds = qa.predict(ids)
    assert preds == [golden_expected[i]["gold"] for i in ids]
    assert len(qa.retrievals_) == len(qa.traces_) == 10
    assert qa.score(ids) == 1.0


def test_end_to_end_cot_scores_lower(golden_corpus, golden_mock):
    ids = [q.id for q in golden_corpus.questions]
    full = TableTextQA(golden_mock()).fit(golden_corpus).score(ids)
    cot = TableTextQA(golden_mock(), mode="cot").fit(golden_corpus).score(ids)
    std = TableTextQA(golden_mock(), mode="standard").fit(golden_corpus).score(ids)
    assert full >= cot >= std and full > std


def test_stage_mapping(golden_corpus, golden_mock):
    main, rest = golden_mock(), golden_mock()
    TableTextQA({"main_qa": main, "default": rest}).fit(golden_corpus).predict(["g01"])
    assert main.calls.generate == 1 and main.calls.embed == 0 and rest.calls.embed > 0
