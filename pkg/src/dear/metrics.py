"""Ranking metrics: nDCG@k against graded judgments and Top-k answer
accuracy for queries that carry gold answer strings, plus an aggregate
report with JSON and plain-table renderings.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DataError
from .retrieval import CorpusIndex, Qrels, Query, RunList

NDCG_CUTOFFS = (1, 5, 10)
ACCURACY_CUTOFFS = (1, 10, 20, 50)


def dcg_term(rel: int, position: int, linear_gain: bool = False) -> float:
    """One summand of DCG: gain(rel) / log2(position + 1), position 1-based.

    Exponential gain 2^rel - 1 by default (trec_eval convention); the linear
    flag switches the gain to rel itself.
    """
    gain = float(rel) if linear_gain else float(2 ** rel - 1)
    return gain / math.log2(position + 1)


def ndcg_at_k(run: RunList, qrels: Qrels, k: int,
              linear_gain: bool = False) -> float:
    """Normalized DCG at cutoff k.

    Unjudged documents count as grade 0. The ideal DCG uses the optimal
    ordering of that query's judged documents only; a query with no
    positive judgments scores 0 by convention.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dcg = sum(
        dcg_term(qrels.get(run.query_id, entry.doc_id), i, linear_gain)
        for i, entry in enumerate(run.entries[:k], start=1)
    )
    ideal = sorted(qrels.judged_grades(run.query_id), reverse=True)
    idcg = sum(dcg_term(g, i, linear_gain)
               for i, g in enumerate(ideal[:k], start=1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


_PUNCT = re.compile(r"[^\w\s]|_")


def normalize_answer_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def top_k_accuracy(run: RunList, query: Query, corpus: CorpusIndex,
                   k: int) -> int:
    """1 if any of the first k documents contains any gold answer string
    after normalization, else 0."""
    if not query.answers:
        raise DataError(f"query {query.query_id!r} has no answer strings")
    answers = [normalize_answer_text(a) for a in query.answers]
    for entry in run.entries[:k]:
        text = normalize_answer_text(corpus.get_document(entry.doc_id).text)
        if any(answer and answer in text for answer in answers):
            return 1
    return 0


@dataclass
class EvalReport:
    """Per-query and mean metrics over one run set.

    ndcg maps cutoff -> query_id -> value; accuracy likewise but only over
    queries that carry answers (empty when none do or no corpus was given).
    """

    query_count: int
    ndcg: dict[int, dict[str, float]] = field(default_factory=dict)
    accuracy: dict[int, dict[str, int]] = field(default_factory=dict)

    def mean_ndcg(self, k: int) -> float:
        values = self.ndcg[k]
        return sum(values.values()) / len(values) if values else 0.0

    def mean_accuracy(self, k: int) -> float:
        values = self.accuracy[k]
        return sum(values.values()) / len(values) if values else 0.0

    def to_dict(self) -> dict:
        result: dict = {"query_count": self.query_count}
        result["ndcg"] = {str(k): dict(sorted(v.items()))
                          for k, v in self.ndcg.items()}
        result["mean_ndcg"] = {str(k): self.mean_ndcg(k) for k in self.ndcg}
        if self.accuracy:
            result["top_k_accuracy"] = {str(k): dict(sorted(v.items()))
                                        for k, v in self.accuracy.items()}
            result["mean_top_k_accuracy"] = {str(k): self.mean_accuracy(k)
                                             for k in self.accuracy}
        return result

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def table(self) -> str:
        rows = [("metric", "mean")]
        for k in sorted(self.ndcg):
            rows.append((f"nDCG@{k}", f"{self.mean_ndcg(k):.4f}"))
        for k in sorted(self.accuracy):
            rows.append((f"Top-{k}", f"{self.mean_accuracy(k):.4f}"))
        rows.append(("queries", str(self.query_count)))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate(runs: Sequence[RunList], qrels: Qrels, queries: Sequence[Query],
             ndcg_cutoffs: Sequence[int] = NDCG_CUTOFFS,
             accuracy_cutoffs: Sequence[int] = ACCURACY_CUTOFFS,
             corpus: CorpusIndex | None = None,
             linear_gain: bool = False) -> EvalReport:
    """Aggregate nDCG (always) and Top-k accuracy (for queries with answers,
    when a corpus is available to resolve document text) over all runs."""
    by_id = {q.query_id: q for q in queries}
    unknown = [r.query_id for r in runs if r.query_id not in by_id]
    if unknown:
        raise DataError(f"runs reference unknown queries: {', '.join(unknown)}")
    report = EvalReport(query_count=len(runs))
    report.ndcg = {k: {} for k in ndcg_cutoffs}
    for run in runs:
        for k in ndcg_cutoffs:
            report.ndcg[k][run.query_id] = ndcg_at_k(run, qrels, k, linear_gain)
    if corpus is not None:
        answered = [r for r in runs if by_id[r.query_id].answers]
        if answered:
            report.accuracy = {k: {} for k in accuracy_cutoffs}
            for run in answered:
                for k in accuracy_cutoffs:
                    report.accuracy[k][run.query_id] = top_k_accuracy(
                        run, by_id[run.query_id], corpus, k)
    return report
