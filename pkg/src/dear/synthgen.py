"""Synthetic listwise training data: sample queries, retrieve candidates,
elicit reasoning plus a final ranking from a teacher chat backend, and keep
only examples whose ranking parsed without repair.

Rejection rather than repair is deliberate: a repaired permutation would
bake the parser's repair policy into supervision. A rejection rate above
the configured ceiling aborts generation, since it signals a teacher or
prompt problem rather than occasional noise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BackendError, DataError, SynthgenAborted
from .listwise import (ChatBackend, Permutation, build_prompt,
                       parse_permutation)
from .retrieval import CorpusIndex, Query, bm25_search

log = logging.getLogger(__name__)

MAX_PASSAGES = 20

EXAMPLE_FIELDS = ("query_id", "query", "passages", "reasoning", "ranking",
                  "teacher_model", "created_at")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class SyntheticExample:
    """One teacher-ranked training record."""

    query: Query
    passages: tuple[str, ...]
    reasoning: str
    ranking: Permutation
    teacher_model: str
    created_at: str

    def __post_init__(self):
        if not self.passages:
            raise ValueError("example needs at least one passage")
        if len(self.passages) > MAX_PASSAGES:
            raise ValueError(f"at most {MAX_PASSAGES} passages per example, "
                             f"got {len(self.passages)}")
        if len(self.ranking) != len(self.passages):
            raise ValueError("ranking length must match passage count")


@dataclass
class GenerationReport:
    """Outcome counts for one generation run."""

    attempts: int = 0
    accepted: int = 0
    rejected_repairs: int = 0
    rejected_empty_reasoning: int = 0
    backend_failures: int = 0
    no_candidates: int = 0

    @property
    def rejected(self) -> int:
        return self.rejected_repairs + self.rejected_empty_reasoning

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.attempts if self.attempts else 0.0


def _split_reasoning(text: str) -> str:
    """Text before the final scaffold line, with the scaffold's leading
    hash marks stripped off."""
    idx = text.lower().rfind("final reranking")
    if idx < 0:
        return text.strip()
    end = idx
    while end > 0 and text[end - 1] in "# \t":
        end -= 1
    return text[:end].strip()


def generate_examples(
    queries: Sequence[Query],
    corpus: CorpusIndex,
    backend: ChatBackend,
    target_count: int,
    per_query_candidates: int = 20,
    seed: int = 0,
    teacher_model: str = "mock",
    mode: str = "cot",
    clock: Callable[[], str] = _utc_now,
    abort_after: int = 20,
    max_rejection_rate: float = 0.5,
) -> tuple[list[SyntheticExample], GenerationReport]:
    """Generate up to target_count validated examples.

    Queries are sampled without replacement in seeded shuffle order, each
    contributing at most one example from its BM25 top candidates. An
    example is accepted only if the teacher's ranking parses with zero
    repairs (and, in cot mode, nonempty reasoning). Once abort_after
    responses have been parsed, a rejection rate above max_rejection_rate
    raises SynthgenAborted carrying the report so far.
    """
    if target_count < 0:
        raise ValueError("target_count must be >= 0")
    if not 1 <= per_query_candidates <= MAX_PASSAGES:
        raise ValueError(f"per_query_candidates must be in 1..{MAX_PASSAGES}")
    report = GenerationReport()
    examples: list[SyntheticExample] = []
    if target_count == 0:
        return examples, report
    if not queries:
        raise DataError("no queries to sample from")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(queries))
    for qi in order:
        if len(examples) >= target_count:
            break
        query = queries[qi]
        run = bm25_search(corpus, query, top_k=per_query_candidates)
        if not run.entries:
            report.no_candidates += 1
            continue
        passages = tuple(corpus.get_document(d).text for d in run.doc_ids())
        prompt = build_prompt(query, passages, mode=mode)
        try:
            response = backend.complete(prompt)
        except BackendError as exc:
            report.backend_failures += 1
            log.warning("teacher backend failed for query %s: %s",
                        query.query_id, exc)
            continue
        report.attempts += 1
        ranking, repairs = parse_permutation(response, len(passages))
        reasoning = _split_reasoning(response)
        if not repairs.clean():
            report.rejected_repairs += 1
        elif mode == "cot" and not reasoning:
            report.rejected_empty_reasoning += 1
        else:
            examples.append(SyntheticExample(
                query=query, passages=passages, reasoning=reasoning,
                ranking=ranking, teacher_model=teacher_model,
                created_at=clock()))
            report.accepted += 1
        if (report.attempts >= abort_after
                and report.rejection_rate > max_rejection_rate):
            raise SynthgenAborted(
                f"rejection rate {report.rejection_rate:.2f} after "
                f"{report.attempts} attempts exceeds the "
                f"{max_rejection_rate:.2f} ceiling", report=report)
    return examples, report


def write_examples(examples: Sequence[SyntheticExample], path: str | Path) -> None:
    """One JSON object per line, fields in a fixed order so identical
    example lists serialize byte-identically."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            record = {
                "query_id": ex.query.query_id,
                "query": ex.query.text,
                "passages": list(ex.passages),
                "reasoning": ex.reasoning,
                "ranking": list(ex.ranking.order),
                "teacher_model": ex.teacher_model,
                "created_at": ex.created_at,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _validate_ranking(ranking: object, k: int, lineno: int) -> Permutation:
    if (not isinstance(ranking, list)
            or not all(isinstance(i, int) and not isinstance(i, bool)
                       for i in ranking)):
        raise DataError(f"line {lineno}: ranking must be a list of integers")
    seen: set[int] = set()
    for i in ranking:
        if i in seen:
            raise DataError(f"line {lineno}: duplicate id {i} in ranking")
        seen.add(i)
    if sorted(seen) != list(range(1, k + 1)):
        raise DataError(f"line {lineno}: ranking is not a permutation of 1..{k}")
    return Permutation(order=tuple(ranking))


def read_examples(path: str | Path) -> list[SyntheticExample]:
    """Inverse of write_examples; every record is fully validated and
    errors carry the offending line number."""
    examples: list[SyntheticExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            missing = [f for f in EXAMPLE_FIELDS if f not in record]
            if missing:
                raise DataError(f"line {lineno}: missing fields "
                                f"{', '.join(missing)}")
            extra = [f for f in record if f not in EXAMPLE_FIELDS]
            if extra:
                raise DataError(f"line {lineno}: unexpected fields "
                                f"{', '.join(extra)}")
            passages = record["passages"]
            if (not isinstance(passages, list) or not passages
                    or not all(isinstance(p, str) for p in passages)):
                raise DataError(f"line {lineno}: passages must be a nonempty "
                                "list of strings")
            ranking = _validate_ranking(record["ranking"], len(passages), lineno)
            try:
                examples.append(SyntheticExample(
                    query=Query(query_id=str(record["query_id"]),
                                text=str(record["query"])),
                    passages=tuple(passages),
                    reasoning=str(record["reasoning"]),
                    ranking=ranking,
                    teacher_model=str(record["teacher_model"]),
                    created_at=str(record["created_at"]),
                ))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
    return examples
