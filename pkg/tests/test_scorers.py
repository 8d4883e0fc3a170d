import json
import math

import numpy as np
import pytest

from dear import (BackendError, DataError, Document, LinearScorer,
                  PlantedTeacher, Query, RemoteScorer, RunList, ScoreRequest,
                  bm25_score, extract_features, fit_standardizer,
                  rerank_pointwise, stable_rng, standardize, tokenize)
from dear.scorers import FEATURE_NAMES


# --- features ----------------------------------------------------------------

def test_feature_vector_hand_computed(toy_index, toy_query):
    # d1 = "The quick brown fox jumps over the lazy dog", 9 tokens, avgdl 8.2
    doc = toy_index.get_document("d1")
    feats = extract_features(toy_index, toy_query, doc)
    assert feats.shape == (5,)
    expected_bm25 = bm25_score(toy_index, tokenize(toy_query.text), 0)
    np.testing.assert_allclose(
        feats, [expected_bm25, 3 / 3, 9 / 8.2, 1.0, 1.0], rtol=1e-12)


def test_exact_match_requires_contiguous_order(toy_index):
    # d4 has "quick" and "brown" and "fox" but never as the phrase
    q = Query(query_id="q", text="quick brown fox")
    feats = extract_features(toy_index, q, toy_index.get_document("d4"))
    assert feats[1] == 1.0   # all three terms appear
    assert feats[3] == 0.0   # but not contiguously in query order


def test_feature_errors_on_empty_token_streams(toy_index):
    with pytest.raises(DataError):
        extract_features(toy_index, Query(query_id="q", text="!!!"),
                         toy_index.get_document("d1"))


def test_feature_names_match_dimension():
    assert len(FEATURE_NAMES) == 5
    assert FEATURE_NAMES[-1] == "bias"


# --- standardizer ------------------------------------------------------------

def test_fit_standardizer_centers_and_scales():
    rng = np.random.default_rng(0)
    feats = rng.normal(3.0, 2.0, size=(200, 4))
    means, stds = fit_standardizer(feats)
    z = standardize(feats, means, stds)
    np.testing.assert_allclose(z.mean(axis=0), np.zeros(4), atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), np.ones(4), rtol=1e-12)


def test_fit_standardizer_passes_constant_columns_through():
    feats = np.column_stack([np.arange(10.0), np.ones(10)])
    means, stds = fit_standardizer(feats)
    assert means[1] == 0.0 and stds[1] == 1.0
    z = standardize(feats, means, stds)
    np.testing.assert_allclose(z[:, 1], np.ones(10))


# --- LinearScorer ------------------------------------------------------------

def test_linear_scorer_bias_only(toy_index, toy_query):
    scorer = LinearScorer([0, 0, 0, 0, 2.5], toy_index)
    docs = tuple(toy_index.documents.values())
    scores = scorer.score_batch(ScoreRequest(query=toy_query, documents=docs))
    np.testing.assert_allclose(scores, np.full(len(docs), 2.5))


def test_linear_scorer_is_linear_in_weights(toy_index, toy_query):
    docs = tuple(toy_index.documents.values())
    req = ScoreRequest(query=toy_query, documents=docs)
    w = np.array([0.5, 1.0, -0.25, 2.0, 0.1])
    base = LinearScorer(w, toy_index).score_batch(req)
    doubled = LinearScorer(2 * w, toy_index).score_batch(req)
    np.testing.assert_allclose(doubled, 2 * base, rtol=1e-12)


def test_linear_scorer_weight_validation(toy_index):
    with pytest.raises(ValueError):
        LinearScorer([1.0, 2.0], toy_index)
    with pytest.raises(ValueError):
        LinearScorer([1, 2, 3, 4, np.inf], toy_index)


def test_linear_scorer_save_load_round_trip(tmp_path, toy_index, toy_query):
    scorer = LinearScorer([0.5, 1.5, -0.5, 2.0, 0.25], toy_index,
                          feature_means=[1, 0, 1, 0, 0],
                          feature_stds=[2, 1, 0.5, 1, 1])
    path = tmp_path / "student.json"
    scorer.save(path)
    loaded = LinearScorer.load(path, toy_index)
    req = ScoreRequest(query=toy_query, documents=tuple(toy_index.documents.values()))
    np.testing.assert_array_equal(loaded.score_batch(req), scorer.score_batch(req))

    payload = json.loads(path.read_text())
    assert set(payload) == {"weights", "feature_means", "feature_stds"}


# --- stable_rng / PlantedTeacher ----------------------------------------------

def test_stable_rng_deterministic_and_keyed():
    a = stable_rng(7, "q1", "d1").standard_normal()
    b = stable_rng(7, "q1", "d1").standard_normal()
    c = stable_rng(7, "q1", "d2").standard_normal()
    d = stable_rng(8, "q1", "d1").standard_normal()
    assert a == b
    assert a != c and a != d


def test_stable_rng_resists_part_concatenation_collisions():
    assert (stable_rng(0, "ab", "c").standard_normal()
            != stable_rng(0, "a", "bc").standard_normal())


def test_planted_teacher_noiseless(toy_index):
    teacher = PlantedTeacher({("q1", "d1"): 3, ("q1", "d3"): 1}, scale=2.0)
    req = ScoreRequest(query=Query(query_id="q1", text="x"),
                       documents=tuple(toy_index.resolve(["d1", "d2", "d3"])))
    np.testing.assert_allclose(teacher.score_batch(req), [6.0, 0.0, 2.0])


def test_planted_teacher_noise_is_per_pair_and_order_free(toy_index):
    teacher = PlantedTeacher({("q1", "d1"): 2}, noise_sigma=0.5, seed=11)
    q = Query(query_id="q1", text="x")
    fwd = teacher.score_batch(ScoreRequest(
        query=q, documents=tuple(toy_index.resolve(["d1", "d2"]))))
    rev = teacher.score_batch(ScoreRequest(
        query=q, documents=tuple(toy_index.resolve(["d2", "d1"]))))
    np.testing.assert_array_equal(fwd, rev[::-1])
    assert fwd[0] != 2.0  # noise actually applied


def test_planted_teacher_validation():
    with pytest.raises(ValueError):
        PlantedTeacher({}, noise_sigma=-1.0)
    with pytest.raises(ValueError):
        PlantedTeacher({}, scale=0.0)


# --- rerank_pointwise ----------------------------------------------------------

def test_rerank_pointwise_sorts_by_score(toy_index):
    run = RunList.from_scored("q1", [("d1", 3.0), ("d2", 2.0), ("d3", 1.0)])
    teacher = PlantedTeacher({("q1", "d3"): 3, ("q1", "d2"): 1})
    out = rerank_pointwise(teacher, run, toy_index, Query(query_id="q1", text="x"))
    assert out.doc_ids() == ["d3", "d2", "d1"]
    assert [e.rank for e in out.entries] == [1, 2, 3]
    assert [e.score for e in out.entries] == [3.0, 1.0, 0.0]


def test_rerank_pointwise_ties_keep_first_stage_order(toy_index):
    run = RunList.from_scored("q1", [("d2", 9.0), ("d5", 8.0), ("d1", 7.0)])
    scorer = LinearScorer([0, 0, 0, 0, 1.0], toy_index)  # all scores equal
    out = rerank_pointwise(scorer, run, toy_index, Query(query_id="q1", text="fox"))
    assert out.doc_ids() == ["d2", "d5", "d1"]


def test_rerank_pointwise_preserves_doc_set_and_is_idempotent(toy_index):
    run = RunList.from_scored("q1", [(d, 10.0 - i) for i, d in
                                     enumerate(["d1", "d2", "d3", "d4", "d5"])])
    teacher = PlantedTeacher({("q1", "d4"): 5, ("q1", "d2"): 3, ("q1", "d5"): 1})
    q = Query(query_id="q1", text="x")
    once = rerank_pointwise(teacher, run, toy_index, q)
    twice = rerank_pointwise(teacher, once, toy_index, q)
    assert sorted(once.doc_ids()) == sorted(run.doc_ids())
    assert once.doc_ids() == twice.doc_ids()


def test_rerank_pointwise_empty_run_passthrough(toy_index):
    run = RunList(query_id="q1", entries=[])
    out = rerank_pointwise(PlantedTeacher({}), run, toy_index,
                           Query(query_id="q1", text="x"))
    assert len(out) == 0 and out.query_id == "q1"


def test_rerank_pointwise_rejects_non_finite_scores(toy_index):
    class BadScorer:
        def score_batch(self, request):
            return np.array([np.nan] * len(request.documents))

    run = RunList.from_scored("q1", [("d1", 1.0)])
    with pytest.raises(DataError):
        rerank_pointwise(BadScorer(), run, toy_index, Query(query_id="q1", text="x"))


# --- RemoteScorer ---------------------------------------------------------------

def _req(toy_index):
    return ScoreRequest(query=Query(query_id="q1", text="quick fox"),
                        documents=tuple(toy_index.resolve(["d1", "d2"])))


def test_remote_scorer_success_payload_and_scores(http_server, toy_index):
    http_server.set_default(200, {"scores": [0.25, -1.5]})
    scorer = RemoteScorer(http_server.url, api_key="sk-test")
    scores = scorer.score_batch(_req(toy_index))
    np.testing.assert_allclose(scores, [0.25, -1.5])

    sent = http_server.requests[-1]
    assert sent["body"]["query"] == "quick fox"
    assert len(sent["body"]["documents"]) == 2
    assert sent["body"]["template"] == "query: {q} document: {d}"
    assert sent["headers"]["authorization"] == "Bearer sk-test"


def test_remote_scorer_reads_key_from_environment(http_server, toy_index, monkeypatch):
    monkeypatch.setenv("DEAR_SCORER_API_KEY", "sk-env")
    http_server.set_default(200, {"scores": [0.0, 0.0]})
    RemoteScorer(http_server.url).score_batch(_req(toy_index))
    assert http_server.requests[-1]["headers"]["authorization"] == "Bearer sk-env"


def test_remote_scorer_omits_auth_header_without_key(http_server, toy_index, monkeypatch):
    monkeypatch.delenv("DEAR_SCORER_API_KEY", raising=False)
    http_server.set_default(200, {"scores": [0.0, 0.0]})
    RemoteScorer(http_server.url).score_batch(_req(toy_index))
    assert "authorization" not in http_server.requests[-1]["headers"]


def test_remote_scorer_retries_transient_500_then_succeeds(http_server, toy_index):
    http_server.responses.extend([
        (500, {"error": "flaky"}),
        (429, {"error": "slow down"}),
        (200, {"scores": [1.0, 2.0]}),
    ])
    scorer = RemoteScorer(http_server.url, max_retries=3, backoff=0.01)
    scores = scorer.score_batch(_req(toy_index))
    np.testing.assert_allclose(scores, [1.0, 2.0])
    assert len(http_server.requests) == 3


def test_remote_scorer_gives_up_after_max_retries(http_server, toy_index):
    http_server.set_default(503, {"error": "down"})
    scorer = RemoteScorer(http_server.url, max_retries=2, backoff=0.01)
    with pytest.raises(BackendError) as exc_info:
        scorer.score_batch(_req(toy_index))
    assert exc_info.value.status == 503
    assert len(http_server.requests) == 3  # initial try + 2 retries


def test_remote_scorer_client_error_fails_fast(http_server, toy_index):
    http_server.set_default(404, {"error": "no such model"})
    scorer = RemoteScorer(http_server.url, max_retries=3, backoff=0.01)
    with pytest.raises(BackendError) as exc_info:
        scorer.score_batch(_req(toy_index))
    assert exc_info.value.status == 404
    assert len(http_server.requests) == 1  # no retry on 4xx


def test_remote_scorer_rejects_malformed_scores(http_server, toy_index):
    http_server.set_default(200, {"scores": [1.0]})  # wrong length
    with pytest.raises(BackendError, match="malformed"):
        RemoteScorer(http_server.url).score_batch(_req(toy_index))

    http_server.set_default(200, {"result": "ok"})  # missing key
    with pytest.raises(BackendError, match="malformed"):
        RemoteScorer(http_server.url).score_batch(_req(toy_index))


def test_remote_scorer_connection_error_then_backend_error(toy_index):
    scorer = RemoteScorer("http://127.0.0.1:1/unreachable",
                          max_retries=1, backoff=0.01)
    with pytest.raises(BackendError) as exc_info:
        scorer.score_batch(_req(toy_index))
    assert exc_info.value.status is None
    assert "connection error" in str(exc_info.value)


def test_score_request_requires_documents():
    with pytest.raises(ValueError):
        ScoreRequest(query=Query(query_id="q", text="x"), documents=())
