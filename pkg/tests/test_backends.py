import json
import threading

import httpx
import numpy as np
import pytest

from tabtextqa.backends import (
    CachedBackend,
    CacheKey,
    CountingBackend,
    DiskCache,
    GenerationRequest,
    HTTPBackend,
    MockBackend,
    RerankRequest,
    ThrottledBackend,
    keyword_coverage,
    mock_embedding,
)
from tabtextqa.errors import BackendError, CacheCorrupt, DimensionMismatch, TruncationWarning
from tabtextqa.text import fnv1a_64


# -- mock ---------------------------------------------------------------------


def test_fnv1a_reference_values():
    # published FNV-1a 64-bit test vectors
    assert fnv1a_64("") == 0xCBF29CE484222325
    assert fnv1a_64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64("foobar") == 0x85944171F73967E8


def test_mock_embedding_buckets():
    vec = mock_embedding("Red red, blue!")
    expected = np.zeros(256)
    expected[fnv1a_64("red") % 256] += 2
    expected[fnv1a_64("blue") % 256] += 1
    np.testing.assert_allclose(vec, expected / np.linalg.norm(expected), atol=1e-12)
    assert np.linalg.norm(mock_embedding("?!")) == 0.0


def test_mock_embed_is_deterministic_and_counted():
    m = MockBackend()
    a = m.embed_batch(["alpha beta", "gamma"])
    b = m.embed_batch(["alpha beta", "gamma"])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert m.calls.embed == 2 and a[0].shape == (256,)


def test_mock_script_first_match_and_cycling():
    m = MockBackend([
        {"contains": ["Question: X"], "response": ["A", "B"]},
        {"contains": ["Question"], "response": "generic"},
    ])
    r = m.generate(GenerationRequest("Question: X", n_samples=3))
    assert r.samples == ("A", "B", "A")
    assert m.generate(GenerationRequest("Question: Y")).samples == ("generic",)
    assert m.generate(GenerationRequest("nothing")).samples == ("",)


def test_mock_endswith_anchor():
    m = MockBackend([{"endswith": "Answer:", "response": "end"}])
    assert m.generate(GenerationRequest("Q\nAnswer:\n")).samples == ("end",)
    assert m.generate(GenerationRequest("Answer: then more")).samples == ("",)


def test_mock_scripted_error():
    m = MockBackend([{"contains": ["boom"], "error": "scripted failure"}])
    with pytest.raises(BackendError, match="scripted failure"):
        m.generate(GenerationRequest("boom"))


def test_mock_from_script_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"backend_id": "m2", "default_response": "d", "rules": []}))
    m = MockBackend.from_script(path)
    assert m.backend_id == "m2" and m.generate(GenerationRequest("x")).samples == ("d",)


def test_mock_truncation_flag():
    m = MockBackend(default_response="one two three")
    with pytest.warns(TruncationWarning):
        r = m.generate(GenerationRequest("x", max_tokens=3))
    assert r.truncated == (True,)


def test_keyword_coverage():
    assert keyword_coverage("q", ["red hawks", "elm"], "The Red Hawks play at Elm Park.") == 1.0
    assert keyword_coverage("q", ["red", "dover"], "red only") == 0.5
    # no keywords: fall back to the question's content tokens
    assert keyword_coverage("Where is Dover ?", [], "Dover town") == 1.0


def test_request_validation():
    with pytest.raises(ValueError):
        GenerationRequest("")
    with pytest.raises(ValueError):
        GenerationRequest("x", temperature=1.5)
    with pytest.raises(ValueError):
        GenerationRequest("x", n_samples=0)


# -- http ---------------------------------------------------------------------


def http_backend(handler, **kw):
    return HTTPBackend("http://llm.test/v1", "m", transport=httpx.MockTransport(handler), backoff=0.0, **kw)


def test_http_chat_and_embed():
    def handler(request):
        body = json.loads(request.content)
        if request.url.path.endswith("/embeddings"):
            data = [{"index": i, "embedding": [1.0, float(i)]} for i in range(len(body["input"]))][::-1]
            return httpx.Response(200, json={"data": data})
        assert body["temperature"] == 0.5 and body["n"] == 1
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}, "finish_reason": "stop"}]})

    b = http_backend(handler)
    assert b.generate(GenerationRequest("x")).samples == ("hi",)
    vecs = b.embed_batch(["a", "b"])
    assert [v.tolist() for v in vecs] == [[1.0, 0.0], [1.0, 1.0]]


def test_http_api_key_from_env(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    monkeypatch.setenv("TABTEXTQA_API_KEY", "sekret")
    http_backend(handler).generate(GenerationRequest("x"))
    assert seen["auth"] == "Bearer sekret"


def test_http_500_retried_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500, text="oops")

    with pytest.raises(BackendError) as info:
        http_backend(handler).generate(GenerationRequest("x"))
    assert info.value.status == 500 and len(calls) == 3


def test_http_4xx_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="denied")

    with pytest.raises(BackendError) as info:
        http_backend(handler).generate(GenerationRequest("x"))
    assert info.value.status == 401 and len(calls) == 1


def test_http_timeout_is_backend_error():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(BackendError, match="timeout"):
        http_backend(handler, max_attempts=2).generate(GenerationRequest("x"))


def test_http_transient_error_recovers():
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    assert http_backend(handler).generate(GenerationRequest("x")).samples == ("ok",)


def test_http_tops_up_missing_choices():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": "s"}}]})

    assert len(http_backend(handler).generate(GenerationRequest("x", n_samples=3)).samples) == 3


def test_http_length_finish_marks_truncation():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": "s"}, "finish_reason": "length"}]})

    with pytest.warns(TruncationWarning):
        assert http_backend(handler).generate(GenerationRequest("x")).truncated == (True,)


def test_http_dimension_mismatch():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0]}, {"index": 1, "embedding": [1.0, 2.0]}]})

    with pytest.raises(DimensionMismatch):
        http_backend(handler).embed_batch(["a", "b"])


def test_http_rerank_url_and_fallback():
    def handler(request):
        assert request.url.path == "/rerank"
        return httpx.Response(200, json={"score": 1.7})

    req = RerankRequest("q", ("elm",), "Elm Park")
    assert http_backend(handler, rerank_url="http://llm.test/rerank").rerank_score(req) == 1.0
    assert http_backend(handler).rerank_score(req) == 1.0


# -- cache --------------------------------------------------------------------


def test_cache_key_depends_on_decoding_params():
    a = CacheKey.for_request("m", "generate", GenerationRequest("x", temperature=0.5).to_dict())
    b = CacheKey.for_request("m", "generate", GenerationRequest("x", temperature=0.7).to_dict())
    c = CacheKey.for_request("other", "generate", GenerationRequest("x", temperature=0.5).to_dict())
    assert len({a.content_hash, b.content_hash, c.content_hash}) == 3
    assert len(a.content_hash) == 64


def test_cached_generate_hit_and_miss(tmp_path):
    inner = MockBackend(default_response="ans")
    cached = CachedBackend(inner, DiskCache(tmp_path))
    first = cached.generate(GenerationRequest("p"))
    second = cached.generate(GenerationRequest("p"))
    assert (first.cached, second.cached) == (False, True)
    assert first.samples == second.samples and inner.calls.generate == 1
    cached.generate(GenerationRequest("p", temperature=0.9))
    assert inner.calls.generate == 2


def test_cache_persists_across_instances(tmp_path):
    inner = MockBackend(default_response="ans")
    CachedBackend(inner, DiskCache(tmp_path)).generate(GenerationRequest("p"))
    again = CachedBackend(inner, DiskCache(tmp_path)).generate(GenerationRequest("p"))
    assert again.cached and inner.calls.generate == 1


def test_cached_embeddings_per_text(tmp_path):
    inner = MockBackend()
    cached = CachedBackend(inner, DiskCache(tmp_path))
    v1 = cached.embed_batch(["a", "b"])
    v2 = cached.embed_batch(["b", "c", "a"])
    assert inner.calls.embed == 2
    np.testing.assert_array_equal(v1[1], v2[0])
    np.testing.assert_array_equal(v2[1], mock_embedding("c"))


def test_corrupt_entry_evicted_and_recomputed(tmp_path):
    store = DiskCache(tmp_path)
    inner = MockBackend(default_response="ans")
    cached = CachedBackend(inner, store)
    cached.generate(GenerationRequest("p"))
    entry = next(tmp_path.glob("*.json"))
    record = json.loads(entry.read_text())
    record["response"] = record["response"].replace("ans", "bad")
    entry.write_text(json.dumps(record))
    with pytest.warns(CacheCorrupt):
        result = cached.generate(GenerationRequest("p"))
    assert result.samples == ("ans",) and not result.cached
    assert store.corrupt == 1 and inner.calls.generate == 2


def test_cache_rerank(tmp_path):
    inner = MockBackend()
    cached = CachedBackend(inner, DiskCache(tmp_path))
    req = RerankRequest("q", ("a",), "a b")
    assert cached.rerank_score(req) == cached.rerank_score(req) == 1.0
    assert inner.calls.rerank == 1


def test_concurrent_writers_agree(tmp_path):
    """Racing writers of a sampled request all end up with the first stored value."""
    counter = {"n": 0}
    lock = threading.Lock()

    class Varying(MockBackend):
        def generate(self, request):
            with lock:
                counter["n"] += 1
                n = counter["n"]
            return super().generate(request).__class__(samples=[f"s{n}"], backend_id=self.backend_id)

    cached = CachedBackend(Varying(), DiskCache(tmp_path))
    results = []
    barrier = threading.Barrier(8)

    def work():
        barrier.wait()
        results.append(cached.generate(GenerationRequest("p")).samples)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(results)) == 1
    assert len(list(tmp_path.glob("*.json"))) == 1


# -- wrappers -----------------------------------------------------------------


def test_counting_backend():
    inner = MockBackend()
    counting = CountingBackend(inner)
    counting.embed_batch(["a"])
    counting.generate(GenerationRequest("x"))
    counting.rerank_score(RerankRequest("q", (), "t"))
    assert counting.calls.to_dict() == inner.calls.to_dict() == {"embed": 1, "generate": 1, "rerank": 1}


def test_throttled_backend_bounds_concurrency():
    active = {"now": 0, "max": 0}
    lock = threading.Lock()
    gate = threading.Event()

    class Slow(MockBackend):
        def generate(self, request):
            with lock:
                active["now"] += 1
                active["max"] = max(active["max"], active["now"])
            gate.wait(0.05)
            with lock:
                active["now"] -= 1
            return super().generate(request)

    throttled = ThrottledBackend(Slow(), limit=2)
    threads = [threading.Thread(target=throttled.generate, args=(GenerationRequest("x"),)) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert active["max"] <= 2
    with pytest.raises(ValueError):
        ThrottledBackend(MockBackend(), limit=0)
