import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tabtextqa.backends import MockBackend
from tabtextqa.corpus import Corpus, Passage, Question, linked_passages, load_corpus_dir, write_corpus
from tabtextqa.evaluate import exact_match, hit_at_k, normalize_answer, token_f1
from tabtextqa.reader import EntityType, Evidence, majority_vote, predict_entity_type, qa_exemplars, qa_prompt
from tabtextqa.retrieve import RetrievalResult, RetrieverConfig, combine_embeddings, retrieve_rows

from conftest import make_table

WORDS = ["red", "hawk", "elm", "park", "dover", "game", "voss", "march", "city", "river", "the", "a", "bay",
         "north", "stone", "king", "2010", "3", "o'neil", "club"]
word = st.sampled_from(WORDS)
phrase = st.lists(word, min_size=0, max_size=6).map(" ".join)
nonempty_phrase = st.lists(word, min_size=1, max_size=6).map(" ".join)
vec = st.lists(st.floats(-10, 10, allow_nan=False, allow_infinity=False), min_size=4, max_size=4).map(np.array)
unit_vec = vec.filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: v / np.linalg.norm(v))


@given(unit_vec, unit_vec, st.floats(0, 1))
def test_blend_is_normalized_convex_combination(q, r, alpha):
    out = combine_embeddings(q, r, alpha)
    raw = alpha * q + (1 - alpha) * r
    norm = np.linalg.norm(raw)
    if norm < 1e-12:
        assert np.allclose(out, 0.0)
    else:
        np.testing.assert_allclose(out, raw / norm, atol=1e-9)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-9


@given(phrase, phrase)
def test_f1_symmetric_and_bounded(a, b):
    f = token_f1(a, b)
    assert f == token_f1(b, a) and 0.0 <= f <= 1.0
    if exact_match(a, b):
        assert f == 1.0


@given(phrase)
def test_normalize_idempotent(s):
    assert normalize_answer(normalize_answer(s)) == normalize_answer(s)


def _table(rows):
    return make_table("t", ["Name", "Place"], [[a, b] for a, b in rows])


row = st.tuples(nonempty_phrase, nonempty_phrase)


@settings(max_examples=60, deadline=None)
@given(nonempty_phrase, st.lists(row, min_size=3, max_size=6), st.lists(row, min_size=1, max_size=3))
def test_top_k_stable_under_irrelevant_rows(question, rows, extra):
    """Rows scoring no higher than the current k-th row never displace the top k."""
    cfg = RetrieverConfig(k_rows=3)
    b = MockBackend()
    before = retrieve_rows(b, question, _table(rows), cfg)
    extended = _table(rows + extra)
    every = retrieve_rows(b, question, extended, RetrieverConfig(k_rows=len(rows) + len(extra), k_text=99, k_final=3))
    scores = {c.row_index: c.score for c in every}
    assume(all(scores[len(rows) + i] <= before[-1].score for i in range(len(extra))))
    after = retrieve_rows(b, question, extended, cfg)
    assert [c.row_index for c in after] == [c.row_index for c in before]


@given(st.lists(row, min_size=1, max_size=4))
def test_hit1_implies_hit3(rows):
    table = _table(rows)
    corpus = Corpus(tables=(table,), passages=(), questions=(), name="c")
    ranked = retrieve_rows(MockBackend(), "red hawk", table, RetrieverConfig(k_rows=len(rows), k_text=9))
    result = RetrievalResult("q", rows=tuple(ranked))
    for gold in {r[0] for r in rows} | {"absent thing"}:
        if hit_at_k(result, gold, 1, corpus):
            assert hit_at_k(result, gold, 3, corpus)


links = st.lists(st.sampled_from(["p0", "p1", "p2", "p3"]), max_size=4)


@given(st.lists(st.tuples(st.tuples(nonempty_phrase, links), st.tuples(nonempty_phrase, links)), min_size=1, max_size=3))
def test_linked_passages_unique_and_known(cell_rows):
    passages = tuple(Passage(f"p{i}", f"P{i}", f"text {i}") for i in range(3))  # p3 dangles
    table = make_table("t", ["A", "B"], [list(r) for r in cell_rows])
    corpus = Corpus(tables=(table,), passages=passages, questions=(), name="c")
    for i in range(len(cell_rows)):
        ids = [p.id for p in linked_passages(corpus, "t", i)]
        assert len(ids) == len(set(ids)) and "p3" not in ids


_counter = iter(range(10**9))


@settings(max_examples=25, deadline=None)
@given(st.lists(row, min_size=1, max_size=3), nonempty_phrase, nonempty_phrase)
def test_corpus_round_trip(tmp_path_factory, rows, text, gold):
    table = make_table("t", ["Name", "Place"], [[(a, ["p0"]), b] for a, b in rows], page="Pg", section="Sec")
    corpus = Corpus(
        tables=(table,),
        passages=(Passage("p0", "Title", text),),
        questions=(Question("q0", text + " ?", gold, "t", "dev"),),
        name="rt",
    )
    out = tmp_path_factory.mktemp(f"rt{next(_counter)}")
    write_corpus(corpus, out)
    back = load_corpus_dir(out, name="rt")
    assert back.tables == corpus.tables and back.passages == corpus.passages and back.questions == corpus.questions


@given(st.text(max_size=80))
def test_entity_typing_total(question):
    assert isinstance(predict_entity_type(question), EntityType)


@given(nonempty_phrase)
def test_majority_of_singleton(answer):
    assert normalize_answer(majority_vote([answer])) == normalize_answer(answer)


def _is_token_subsequence(small, big):
    it = iter(big.split())
    return all(tok in it for tok in small.split())


@settings(max_examples=50, deadline=None)
@given(nonempty_phrase, st.lists(nonempty_phrase, min_size=1, max_size=3), phrase, nonempty_phrase, nonempty_phrase,
       st.integers(0, 3))
def test_prompt_token_subsequence(question, rows, summary, sub_q, sub_a, shots):
    evidence = Evidence(rows=tuple(rows), passages=(Passage("p", "T", "some passage text"),))
    exemplars = qa_exemplars()[:shots]
    std = qa_prompt("standard", evidence, question, exemplars)
    cot = qa_prompt("cot", evidence, question, exemplars)
    full = qa_prompt("ttqa_rs", evidence, question, exemplars, summary=summary,
                     entity_type=predict_entity_type(question), sub_question=sub_q, sub_answer=sub_a)
    assert _is_token_subsequence(std, cot) and _is_token_subsequence(cot, full)
