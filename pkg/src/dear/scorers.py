"""Pointwise scorers: query-document pairs in, one relevance score per doc out.

Three implementations share the score_batch interface:

* LinearScorer   - trainable dot product over a fixed 5-feature vector,
  optionally standardized with statistics frozen at training time.
* PlantedTeacher - frozen synthetic teacher that scores from planted
  relevance grades plus deterministic per-pair Gaussian noise.
* RemoteScorer   - HTTP client for an external pointwise scoring service.

Scorers are immutable at inference time and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import BackendError, DataError
from .retrieval import CorpusIndex, Document, Query, RunList, bm25_score, tokenize

FEATURE_NAMES = ("bm25_score", "term_overlap", "length_ratio", "exact_match", "bias")
FEATURE_DIM = len(FEATURE_NAMES)

DEFAULT_PAIR_TEMPLATE = "query: {q} document: {d}"


@dataclass(frozen=True)
class ScoreRequest:
    """One query paired with an ordered candidate list."""

    query: Query
    documents: tuple[Document, ...]

    def __post_init__(self):
        if not self.documents:
            raise ValueError("ScoreRequest needs at least one document")


class Scorer(Protocol):
    def score_batch(self, request: ScoreRequest) -> np.ndarray: ...


def extract_features(index: CorpusIndex, query: Query, doc: Document) -> np.ndarray:
    """Deterministic 5-feature vector for a (query, document) pair.

    [bm25, query-term overlap fraction, doc length / corpus average,
     1 if the query token sequence occurs contiguously in the doc, bias 1].
    """
    q_tokens = tokenize(query.text)
    if not q_tokens:
        raise DataError(f"query {query.query_id!r} has no tokens")
    d_tokens = tokenize(doc.text)
    if not d_tokens:
        raise DataError(f"document {doc.doc_id!r} has no tokens")
    ordinal = index.ordinal(doc.doc_id)

    bm25 = bm25_score(index, q_tokens, ordinal)
    q_set, d_set = set(q_tokens), set(d_tokens)
    overlap = len(q_set & d_set) / len(q_set)
    length_ratio = len(d_tokens) / index.avg_doc_length
    exact = 1.0 if _contains_run(d_tokens, q_tokens) else 0.0
    return np.array([bm25, overlap, length_ratio, exact, 1.0], dtype=np.float64)


def _contains_run(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i:i + n] == needle for i in range(len(haystack) - n + 1))


def standardize(features: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return (features - means) / stds


def fit_standardizer(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over a feature matrix; constant features
    (including the bias column) pass through unscaled."""
    means = features.mean(axis=0)
    stds = features.std(axis=0)
    constant = stds < 1e-12
    means[constant] = 0.0
    stds[constant] = 1.0
    return means, stds


class LinearScorer:
    """score = weights . standardized_features, bound to a corpus index."""

    def __init__(self, weights: Sequence[float], index: CorpusIndex,
                 feature_means: Sequence[float] | None = None,
                 feature_stds: Sequence[float] | None = None):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (FEATURE_DIM,):
            raise ValueError(f"weights must have shape ({FEATURE_DIM},)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        self.index = index
        self.feature_means = (np.asarray(feature_means, dtype=np.float64)
                              if feature_means is not None else np.zeros(FEATURE_DIM))
        self.feature_stds = (np.asarray(feature_stds, dtype=np.float64)
                             if feature_stds is not None else np.ones(FEATURE_DIM))

    def features(self, query: Query, doc: Document) -> np.ndarray:
        raw = extract_features(self.index, query, doc)
        return standardize(raw, self.feature_means, self.feature_stds)

    def score_batch(self, request: ScoreRequest) -> np.ndarray:
        feats = np.stack([self.features(request.query, d) for d in request.documents])
        return feats @ self.weights

    def save(self, path: str | Path) -> None:
        payload = {
            "weights": self.weights.tolist(),
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path, index: CorpusIndex) -> "LinearScorer":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(payload["weights"], index,
                   payload.get("feature_means"), payload.get("feature_stds"))


def stable_rng(seed: int, *parts: str) -> np.random.Generator:
    """Generator keyed by (seed, *parts), independent of call order and
    platform; lets per-item randomness survive reordering of the items."""
    digest = hashlib.blake2b(
        "\x1f".join([str(seed), *parts]).encode("utf-8"), digest_size=8
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def _stable_noise(seed: int, query_id: str, doc_id: str) -> float:
    return float(stable_rng(seed, query_id, doc_id).standard_normal())


class PlantedTeacher:
    """Frozen teacher scoring from planted grades: scale*grade + N(0, sigma).

    Grades are never updated; pairs missing from the map score as grade 0.
    """

    def __init__(self, relevance_map: dict[tuple[str, str], int],
                 noise_sigma: float = 0.0, scale: float = 1.0, seed: int = 0):
        if noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if scale <= 0.0:
            raise ValueError("scale must be > 0")
        self.relevance_map = dict(relevance_map)
        self.noise_sigma = noise_sigma
        self.scale = scale
        self.seed = seed

    def score_batch(self, request: ScoreRequest) -> np.ndarray:
        qid = request.query.query_id
        scores = []
        for doc in request.documents:
            grade = self.relevance_map.get((qid, doc.doc_id), 0)
            noise = 0.0
            if self.noise_sigma > 0.0:
                noise = self.noise_sigma * _stable_noise(self.seed, qid, doc.doc_id)
            scores.append(self.scale * grade + noise)
        return np.asarray(scores, dtype=np.float64)


class RemoteScorer:
    """Client for the remote pointwise protocol.

    POSTs {"query", "documents", "template"} and expects {"scores": [...]}.
    The template serializes each pair the way the backend's encoder expects;
    the default mirrors the `query: ... document: ...` convention. Retries
    transient failures (connection errors, 429, 5xx) with exponential
    backoff, then raises BackendError carrying the last HTTP status. A
    semaphore caps concurrent in-flight requests across threads.
    """

    def __init__(self, url: str, template: str = DEFAULT_PAIR_TEMPLATE,
                 api_key: str | None = None, api_key_env: str = "DEAR_SCORER_API_KEY",
                 timeout: float = 30.0, max_retries: int = 3,
                 backoff: float = 0.5, max_in_flight: int = 4):
        self.url = url
        self.template = template
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._semaphore = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def score_batch(self, request: ScoreRequest) -> np.ndarray:
        payload = {
            "query": request.query.text,
            "documents": [d.text for d in request.documents],
            "template": self.template,
        }
        last_status: int | None = None
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = httpx.post(self.url, json=payload,
                                          headers=self._headers(), timeout=self.timeout)
            except httpx.HTTPError as exc:
                last_error = f"connection error: {exc}"
                continue
            last_status = response.status_code
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise BackendError(f"remote scorer returned HTTP {response.status_code}",
                                   status=response.status_code)
            scores = response.json().get("scores")
            if not isinstance(scores, list) or len(scores) != len(request.documents):
                raise BackendError("remote scorer returned a malformed scores array",
                                   status=response.status_code)
            return np.asarray(scores, dtype=np.float64)
        raise BackendError(f"remote scorer failed after {self.max_retries + 1} attempts "
                           f"({last_error})", status=last_status)


def rerank_pointwise(scorer: Scorer, run: RunList, corpus: CorpusIndex,
                     query: Query) -> RunList:
    """Reorder a run by scorer scores, ties broken by first-stage rank.

    The doc set is preserved exactly; ranks are renumbered and scores
    replaced by the scorer's.
    """
    if not run.entries:
        return RunList(query_id=run.query_id, entries=[])
    documents = corpus.resolve(run.doc_ids())
    scores = scorer.score_batch(ScoreRequest(query=query, documents=tuple(documents)))
    if not np.all(np.isfinite(scores)):
        raise DataError(f"scorer produced non-finite scores for query {query.query_id!r}")
    order = sorted(range(len(documents)), key=lambda i: (-scores[i], i))
    return RunList.from_scored(
        run.query_id, [(documents[i].doc_id, float(scores[i])) for i in order]
    )
