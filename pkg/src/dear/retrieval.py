"""Corpus ingestion, in-memory BM25 retrieval, and TREC run/qrels I/O.

The index is immutable once built; concurrent read-only searches are safe.
Scoring uses the Lucene-style BM25 with k1=0.9, b=0.4 defaults so that
desk-scale runs line up with the common Pyserini toolchain.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str

    def __post_init__(self):
        if not self.doc_id or any(c.isspace() for c in self.doc_id):
            raise DataError(f"doc_id must be nonempty and whitespace-free: {self.doc_id!r}")
        if len(self.text) == 0:
            raise DataError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    answers: tuple[str, ...] | None = None


@dataclass
class CorpusIndex:
    """Inverted index over a fixed document set.

    postings maps term -> list of (doc ordinal, term frequency); ordinals
    index into doc_ids/doc_lengths. Documents are retained so downstream
    stages can resolve doc_id -> text.
    """

    doc_ids: list[str]
    documents: dict[str, Document]
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avg_doc_length: float
    doc_count: int

    @classmethod
    def build(cls, documents: Sequence[Document]) -> "CorpusIndex":
        if not documents:
            raise DataError("empty corpus")
        doc_ids: list[str] = []
        by_id: dict[str, Document] = {}
        postings: dict[str, list[tuple[int, int]]] = {}
        doc_lengths: list[int] = []
        for ordinal, doc in enumerate(documents):
            if doc.doc_id in by_id:
                raise DataError(f"duplicate doc_id {doc.doc_id!r}")
            doc_ids.append(doc.doc_id)
            by_id[doc.doc_id] = doc
            tokens = tokenize(doc.text)
            doc_lengths.append(len(tokens))
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((ordinal, tf))
        total = sum(doc_lengths)
        if total == 0:
            raise DataError("corpus has no tokens after tokenization")
        return cls(
            doc_ids=doc_ids,
            documents=by_id,
            postings=postings,
            doc_lengths=doc_lengths,
            avg_doc_length=total / len(doc_ids),
            doc_count=len(doc_ids),
        )

    def get_document(self, doc_id: str) -> Document:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise DataError(f"unknown doc_id {doc_id!r}") from None

    def ordinal(self, doc_id: str) -> int:
        ordinals = getattr(self, "_ordinals", None)
        if ordinals is None:
            ordinals = {d: i for i, d in enumerate(self.doc_ids)}
            self._ordinals = ordinals
        try:
            return ordinals[doc_id]
        except KeyError:
            raise DataError(f"unknown doc_id {doc_id!r}") from None

    def resolve(self, doc_ids: Iterable[str]) -> list[Document]:
        """Look up several documents, reporting every missing id at once."""
        ids = list(doc_ids)
        missing = [d for d in ids if d not in self.documents]
        if missing:
            raise DataError(f"doc_ids not in corpus: {', '.join(missing)}")
        return [self.documents[d] for d in ids]


@dataclass(frozen=True)
class RunEntry:
    doc_id: str
    score: float
    rank: int


@dataclass
class RunList:
    """Ranked retrieval results for one query.

    Ranks are 1..n contiguous, scores non-increasing with rank, doc_ids
    distinct; violated invariants raise at construction.
    """

    query_id: str
    entries: list[RunEntry] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        prev_score = math.inf
        for i, entry in enumerate(self.entries, start=1):
            if entry.rank != i:
                raise DataError(
                    f"run for {self.query_id!r}: rank {entry.rank} at position {i} "
                    "(ranks must be 1..n contiguous)"
                )
            if entry.score > prev_score:
                raise DataError(
                    f"run for {self.query_id!r}: score increases at rank {i}"
                )
            if entry.doc_id in seen:
                raise DataError(
                    f"run for {self.query_id!r}: duplicate doc_id {entry.doc_id!r}"
                )
            seen.add(entry.doc_id)
            prev_score = entry.score

    @classmethod
    def from_scored(cls, query_id: str, scored: Sequence[tuple[str, float]]) -> "RunList":
        """Build a run from (doc_id, score) pairs already in rank order."""
        entries = [RunEntry(d, s, i) for i, (d, s) in enumerate(scored, start=1)]
        return cls(query_id=query_id, entries=entries)

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Qrels:
    """Graded relevance judgments keyed by (query_id, doc_id)."""

    grades: dict[tuple[str, str], int] = field(default_factory=dict)
    duplicate_overwrites: int = 0

    def get(self, query_id: str, doc_id: str, default: int = 0) -> int:
        return self.grades.get((query_id, doc_id), default)

    def judged_grades(self, query_id: str) -> list[int]:
        return [g for (qid, _), g in self.grades.items() if qid == query_id]

    def set(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise DataError(f"negative grade for ({query_id}, {doc_id})")
        key = (query_id, doc_id)
        if key in self.grades:
            self.duplicate_overwrites += 1
        self.grades[key] = grade


def _parse_jsonl_record(line: str, lineno: int) -> Document:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(record, dict) or "doc_id" not in record or "text" not in record:
        raise DataError(f"line {lineno}: record must have doc_id and text fields")
    try:
        return Document(doc_id=str(record["doc_id"]), text=str(record["text"]))
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None


def _parse_tsv_record(line: str, lineno: int) -> Document:
    fields = line.split("\t")
    if len(fields) != 2:
        raise DataError(f"line {lineno}: expected 2 fields, got {len(fields)}")
    try:
        return Document(doc_id=fields[0], text=fields[1])
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None


def ingest_corpus(path: str | Path, format: str = "jsonl") -> CorpusIndex:
    """Read a corpus file (jsonl or 2-column tsv) and build the index.

    JSONL lines look like {"doc_id": ..., "text": ...}; TSV lines are
    doc_id<TAB>text. Blank lines are rejected as malformed records.
    """
    if format not in ("jsonl", "tsv"):
        raise DataError(f"unknown corpus format {format!r}")
    parse = _parse_jsonl_record if format == "jsonl" else _parse_tsv_record
    documents: list[Document] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                raise DataError(f"line {lineno}: empty record")
            documents.append(parse(line, lineno))
    if not documents:
        raise DataError("empty corpus")
    return CorpusIndex.build(documents)


def bm25_term_weight(tf: int, df: int, doc_len: int, index: CorpusIndex,
                     k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> float:
    """One (term, document) BM25 contribution with Lucene-style IDF."""
    n = index.doc_count
    idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
    norm = tf + k1 * (1.0 - b + b * doc_len / index.avg_doc_length)
    return idf * tf * (k1 + 1.0) / norm


def bm25_score(index: CorpusIndex, query_tokens: Sequence[str], ordinal: int,
               k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> float:
    """BM25 score of one document for a tokenized query.

    Repeated query tokens contribute once per occurrence, matching the
    Lucene behaviour of stacking identical term queries.
    """
    score = 0.0
    doc_len = index.doc_lengths[ordinal]
    for term in query_tokens:
        plist = index.postings.get(term)
        if plist is None:
            continue
        for doc_ord, tf in plist:
            if doc_ord == ordinal:
                score += bm25_term_weight(tf, len(plist), doc_len, index, k1, b)
                break
    return score


def bm25_search(index: CorpusIndex, query: Query, top_k: int,
                k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> RunList:
    """Return the top_k matching documents, scores descending.

    Only documents sharing at least one query term are candidates; ties
    break by doc_id ascending. A query with no recognized terms yields an
    empty run.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    query_tokens = tokenize(query.text)
    scores: dict[int, float] = {}
    for term, qtf in Counter(query_tokens).items():
        plist = index.postings.get(term)
        if plist is None:
            continue
        df = len(plist)
        for ordinal, tf in plist:
            w = bm25_term_weight(tf, df, index.doc_lengths[ordinal], index, k1, b)
            scores[ordinal] = scores.get(ordinal, 0.0) + qtf * w
    ranked = sorted(scores.items(), key=lambda item: (-item[1], index.doc_ids[item[0]]))
    top = ranked[:top_k]
    return RunList.from_scored(query.query_id, [(index.doc_ids[o], s) for o, s in top])


# --- TREC-format I/O ------------------------------------------------------
#
# Run lines are exactly `query_id Q0 doc_id rank score tag` with single
# spaces and the score printed to 6 decimal places; qrels lines are
# `query_id 0 doc_id grade`.


def format_run_line(query_id: str, entry: RunEntry, tag: str) -> str:
    return f"{query_id} Q0 {entry.doc_id} {entry.rank} {entry.score:.6f} {tag}"


def write_run(run: RunList, tag: str, path: str | Path) -> None:
    write_runs([run], tag, path)


def write_runs(runs: Sequence[RunList], tag: str, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for entry in run.entries:
                fh.write(format_run_line(run.query_id, entry, tag) + "\n")


def read_run(path: str | Path) -> list[RunList]:
    """Parse a TREC run file back into RunLists, one per query.

    Queries are grouped in order of first appearance; rank gaps or
    duplicates within a query are errors.
    """
    per_query: dict[str, list[RunEntry]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if len(fields) != 6:
                raise DataError(f"{path}: line {lineno}: expected 6 fields, got {len(fields)}")
            qid, _q0, doc_id, rank_s, score_s, _tag = fields
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad rank or score") from None
            if qid not in per_query:
                per_query[qid] = []
                order.append(qid)
            per_query[qid].append(RunEntry(doc_id=doc_id, score=score, rank=rank))
    runs = []
    for qid in order:
        entries = sorted(per_query[qid], key=lambda e: e.rank)
        runs.append(RunList(query_id=qid, entries=entries))  # validates ranks/scores
    return runs


def read_qrels(path: str | Path) -> Qrels:
    """Parse `query_id 0 doc_id grade` lines; later duplicates overwrite."""
    qrels = Qrels()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 fields, got {len(fields)}")
            qid, _zero, doc_id, grade_s = fields
            try:
                grade = int(grade_s)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer grade {grade_s!r}") from None
            if grade < 0:
                raise DataError(f"{path}: line {lineno}: negative grade {grade}")
            qrels.set(qid, doc_id, grade)
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (qid, doc_id), grade in qrels.grades.items():
            fh.write(f"{qid} 0 {doc_id} {grade}\n")


def write_corpus(documents: Sequence[Document], path: str | Path) -> None:
    """JSONL corpus writer, the inverse of ingest_corpus(format="jsonl")."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.text},
                                ensure_ascii=False) + "\n")


def write_queries(queries: Sequence[Query], path: str | Path) -> None:
    """JSONL query writer, the inverse of read_queries for .jsonl paths."""
    with open(path, "w", encoding="utf-8") as fh:
        for query in queries:
            record: dict = {"query_id": query.query_id, "text": query.text}
            if query.answers:
                record["answers"] = list(query.answers)
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_queries(path: str | Path) -> list[Query]:
    """Load queries from JSONL ({"query_id", "text", optional "answers"}) or TSV."""
    path = Path(path)
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if path.suffix in (".jsonl", ".json"):
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
                if "query_id" not in record or "text" not in record:
                    raise DataError(f"{path}: line {lineno}: need query_id and text")
                answers = record.get("answers")
                query = Query(
                    query_id=str(record["query_id"]),
                    text=str(record["text"]),
                    answers=tuple(str(a) for a in answers) if answers else None,
                )
            else:
                fields = line.split("\t")
                if len(fields) != 2:
                    raise DataError(f"{path}: line {lineno}: expected 2 fields, got {len(fields)}")
                query = Query(query_id=fields[0], text=fields[1])
            if query.query_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate query_id {query.query_id!r}")
            seen.add(query.query_id)
            queries.append(query)
    return queries
