"""Seeded synthetic collections with planted relevance grades.

Two generators cover the toolkit's test beds:

* make_benchmark_fixture - a retrieval benchmark where BM25 is deliberately
  mediocre: term-frequency-spamming distractors outscore the truly relevant
  documents, leaving clear headroom for the pointwise and listwise stages.
* make_distill_fixture - a distillation corpus whose queries are verbatim
  snippets of their positive documents, so a linear scorer over the fixed
  feature set can represent a perfect teacher.

Every document carries a unique marker token, which keeps texts distinct
without disturbing query-term statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .retrieval import (CorpusIndex, Document, Qrels, Query, write_corpus,
                        write_qrels, write_queries)


@dataclass
class PlantedFixture:
    """A corpus, its queries, and the planted grades behind them."""

    documents: list[Document]
    queries: list[Query]
    relevance: dict[tuple[str, str], int]

    def index(self) -> CorpusIndex:
        return CorpusIndex.build(self.documents)

    def qrels(self) -> Qrels:
        qrels = Qrels()
        for (qid, did), grade in self.relevance.items():
            qrels.set(qid, did, grade)
        return qrels

    def write(self, directory: str | Path) -> dict[str, Path]:
        """Emit corpus.jsonl, queries.jsonl and qrels.txt under directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": directory / "corpus.jsonl",
            "queries": directory / "queries.jsonl",
            "qrels": directory / "qrels.txt",
        }
        write_corpus(self.documents, paths["corpus"])
        write_queries(self.queries, paths["queries"])
        write_qrels(self.qrels(), paths["qrels"])
        return paths


def _filler(rng: np.random.Generator, vocab: list[str], n: int) -> list[str]:
    return [vocab[i] for i in rng.integers(0, len(vocab), size=n)]


def make_benchmark_fixture(n_queries: int = 20, n_docs: int = 200,
                           seed: int = 0) -> PlantedFixture:
    """Retrieval benchmark with planted graded relevance.

    Each query owns two topic tokens and eight topical documents: four
    relevant ones (grades 3, 2, 1, 1) that mention each topic token once,
    and four grade-0 distractors that spam one topic token in a short
    document. Under BM25's saturation and length normalization the
    distractors outscore the relevant documents, so first-stage quality is
    intentionally poor while a grade-aware scorer can fix the order. The
    grade-3 document carries the query's answer string. Remaining documents
    are off-topic filler.
    """
    if n_docs < 8 * n_queries:
        raise ValueError(f"need at least {8 * n_queries} docs for "
                         f"{n_queries} queries")
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}" for i in range(150)]
    documents: list[Document] = []
    queries: list[Query] = []
    relevance: dict[tuple[str, str], int] = {}
    doc_n = 0

    def add_doc(tokens: list[str]) -> str:
        nonlocal doc_n
        doc_id = f"d{doc_n:04d}"
        documents.append(Document(doc_id=doc_id,
                                  text=" ".join(tokens + [f"ref{doc_n}"])))
        doc_n += 1
        return doc_id

    for qi in range(n_queries):
        qid = f"q{qi:03d}"
        topic_a, topic_b = f"topic{qi}a", f"topic{qi}b"
        answer = f"answer{qi}"
        queries.append(Query(query_id=qid, text=f"{topic_a} {topic_b}",
                             answers=(answer,)))
        for grade in (3, 2, 1, 1):
            body = [topic_a, topic_b] + _filler(rng, vocab, int(rng.integers(18, 30)))
            if grade == 3:
                body.append(answer)
            relevance[(qid, add_doc(body))] = grade
        for _ in range(4):
            spam = [topic_a] + [topic_b] * 6 + _filler(rng, vocab, 2)
            add_doc(spam)
    while doc_n < n_docs:
        add_doc(_filler(rng, vocab, int(rng.integers(15, 25))))
    return PlantedFixture(documents=documents, queries=queries,
                          relevance=relevance)


def make_distill_fixture(n_queries: int = 100, n_docs: int = 200,
                         seed: int = 0) -> PlantedFixture:
    """Distillation corpus over a shared vocabulary.

    Documents are random word sequences; query i quotes three consecutive
    tokens from its positive document (grade 2), giving the positive full
    term overlap and an exact-match hit while plenty of other documents
    share individual words and serve as BM25-reachable negatives.
    """
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}" for i in range(150)]
    documents: list[Document] = []
    for n in range(n_docs):
        body = _filler(rng, vocab, int(rng.integers(15, 31)))
        documents.append(Document(doc_id=f"d{n:04d}",
                                  text=" ".join(body + [f"ref{n}"])))
    queries: list[Query] = []
    relevance: dict[tuple[str, str], int] = {}
    for qi in range(n_queries):
        qid = f"q{qi:03d}"
        doc = documents[int(rng.integers(0, n_docs))]
        tokens = doc.text.split()
        start = int(rng.integers(0, len(tokens) - 3))  # avoid the ref marker
        queries.append(Query(query_id=qid, text=" ".join(tokens[start:start + 3])))
        relevance[(qid, doc.doc_id)] = 2
    return PlantedFixture(documents=documents, queries=queries,
                          relevance=relevance)
