"""Listwise reranking: prompt construction, permutation parsing with repair,
and sliding-window reordering of a candidate list.

The prompt asks a chat model to emit a ranking chain terminated by the
scaffold line "### Final Reranking: [2] > [1] > ...". parse_permutation
recovers a valid permutation from any response text, repairing duplicates,
out-of-range ids and omissions deterministically. rerank_window applies the
prompt/parse loop over overlapping windows, back to front, so good documents
buried deep in the list can bubble into the head across windows.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

from .errors import BackendError, DataError
from .retrieval import Document, Query, RunList

log = logging.getLogger(__name__)

SYSTEM_PROMPT = ("You are RankLLM, an intelligent assistant that can rank "
                 "passages based on their relevancy to the query.")
SCAFFOLD = "### Final Reranking:"
DEFAULT_PASSAGE_TOKEN_BUDGET = 300

COT_STEPS = (
    "Steps to follow:\n"
    "1. List the information requirements to answer the query.\n"
    "2. For each requirement, find the passages that include the relevant "
    "information.\n"
    "3. Rank the passages in descending order of relevance using only the "
    "identifiers (e.g., [2] > [1]).\n"
)

PROMPT_MODES = ("rank_only", "cot")


@dataclass(frozen=True)
class Permutation:
    """A rearrangement of 1..k, validated on construction."""

    order: tuple[int, ...]

    def __post_init__(self):
        k = len(self.order)
        if k == 0:
            raise ValueError("permutation cannot be empty")
        if sorted(self.order) != list(range(1, k + 1)):
            raise ValueError(f"order is not a permutation of 1..{k}: {self.order}")

    def __len__(self) -> int:
        return len(self.order)

    def apply(self, items: Sequence) -> list:
        return [items[i - 1] for i in self.order]


@dataclass(frozen=True)
class ListwisePrompt:
    """System/user message pair for one ranking request over k passages."""

    system: str
    user: str
    num_passages: int

    def __post_init__(self):
        if SCAFFOLD not in self.user:
            raise ValueError("user prompt is missing the reranking scaffold")
        for j in range(1, self.num_passages + 1):
            headers = sum(1 for line in self.user.splitlines()
                          if line.startswith(f"[{j}] "))
            if headers != 1:
                raise ValueError(f"identifier [{j}] appears {headers} times "
                                 "as a passage header, expected exactly 1")


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window geometry. Windows overlap (stride < window) so each
    pass carries its running best documents toward the front."""

    window: int = 20
    stride: int = 10
    candidates: int = 30
    passes: int = 1

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not 1 <= self.stride < self.window:
            raise ValueError("stride must satisfy 1 <= stride < window")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


class ChatBackend(Protocol):
    def complete(self, prompt: ListwisePrompt) -> str: ...


def truncate_passage(text: str, token_budget: int) -> str:
    """Collapse whitespace and cap at a whitespace-token budget, marking
    truncation with a trailing ellipsis."""
    tokens = text.split()
    if len(tokens) <= token_budget:
        return " ".join(tokens)
    return " ".join(tokens[:token_budget]) + "..."


def build_prompt(query: Query, passages: Sequence[str], mode: str = "cot",
                 token_budget: int = DEFAULT_PASSAGE_TOKEN_BUDGET) -> ListwisePrompt:
    """Render the ranking prompt for an ordered passage list.

    rank_only mode asks directly for the reranking; cot mode inserts the
    three reasoning steps before the output-format instruction.
    """
    if mode not in PROMPT_MODES:
        raise ValueError(f"unknown prompt mode {mode!r}")
    if not passages:
        raise ValueError("passage list is empty")
    k = len(passages)
    lines = [
        f"I will provide you with {k} passages, each indicated by a numerical "
        f"identifier []. Rank the passages based on their relevance to the "
        f"search query: {query.text}.",
        "",
    ]
    for j, passage in enumerate(passages, start=1):
        lines.append(f"[{j}] {truncate_passage(passage, token_budget)}")
    lines.extend(["", f"Search Query: {query.text}", ""])
    if mode == "cot":
        lines.extend([COT_STEPS])
    lines.append(
        f"The format of the final output should be '{SCAFFOLD} [] > []', "
        f"e.g., {SCAFFOLD} [2] > [1]."
    )
    return ListwisePrompt(system=SYSTEM_PROMPT, user="\n".join(lines),
                          num_passages=k)


@dataclass
class RepairReport:
    """Counts of each repair applied while recovering a permutation."""

    duplicates: int = 0
    out_of_range: int = 0
    missing: int = 0
    fallback: bool = False

    @property
    def total(self) -> int:
        return self.duplicates + self.out_of_range + self.missing

    def clean(self) -> bool:
        return self.total == 0 and not self.fallback


_BRACKETED = re.compile(r"\[(\d+)\]")
_BARE_CHAIN = re.compile(r"\d+(?:\s*>\s*\d+)+")


def _extract_ids(tail: str) -> list[int]:
    bracketed = _BRACKETED.findall(tail)
    if bracketed:
        return [int(b) for b in bracketed]
    chain = _BARE_CHAIN.search(tail)
    if chain:
        return [int(t) for t in re.findall(r"\d+", chain.group(0))]
    return []


def parse_permutation(text: str, k: int) -> tuple[Permutation, RepairReport]:
    """Recover a length-k permutation from model output.

    Keys on the last occurrence of "final reranking" (case-insensitive,
    leading '#' optional) and reads the id chain after it, bracketed ids
    first, a bare "2 > 1" chain otherwise. Repairs: ids outside 1..k are
    dropped, duplicates keep their first occurrence, absent ids are appended
    in ascending order. Never fails; with nothing to parse it returns the
    identity permutation flagged as a fallback.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    marker = "final reranking"
    idx = text.lower().rfind(marker)
    raw_ids = _extract_ids(text[idx + len(marker):]) if idx >= 0 else []

    report = RepairReport(fallback=not raw_ids)
    kept: list[int] = []
    seen: set[int] = set()
    for i in raw_ids:
        if not 1 <= i <= k:
            report.out_of_range += 1
        elif i in seen:
            report.duplicates += 1
        else:
            kept.append(i)
            seen.add(i)
    for i in range(1, k + 1):
        if i not in seen:
            kept.append(i)
            report.missing += 1
    return Permutation(order=tuple(kept)), report


def window_starts(n: int, window: int, stride: int) -> list[int]:
    """Window start offsets for one back-to-front pass over n items."""
    if n <= window:
        return [0]
    starts = []
    s = n - window
    while s > 0:
        starts.append(s)
        s -= stride
    starts.append(0)
    return starts


def rerank_window(backend: ChatBackend, query: Query, docs: Sequence[Document],
                  cfg: WindowConfig, mode: str = "cot",
                  token_budget: int = DEFAULT_PASSAGE_TOKEN_BUDGET) -> list[Document]:
    """Reorder documents with sliding-window listwise prompts.

    Each window's slice is rewritten in place by the parsed permutation;
    windows run back to front so the overlap region (window - stride items)
    hands the best of each window to the next one. A backend failure leaves
    that window untouched and the pass continues.
    """
    if not docs:
        raise DataError(f"no documents to rerank for query {query.query_id!r}")
    ordered = list(docs)
    n = len(ordered)
    for _ in range(cfg.passes):
        for start in window_starts(n, cfg.window, cfg.stride):
            stop = min(start + cfg.window, n)
            window = ordered[start:stop]
            prompt = build_prompt(query, [d.text for d in window], mode=mode,
                                  token_budget=token_budget)
            try:
                response = backend.complete(prompt)
            except BackendError as exc:
                log.warning("listwise backend failed on query %s window [%d:%d], "
                            "leaving it unchanged: %s", query.query_id, start, stop, exc)
                continue
            perm, repairs = parse_permutation(response, len(window))
            if repairs.total:
                log.debug("query %s window [%d:%d]: repaired permutation "
                          "(duplicates=%d out_of_range=%d missing=%d fallback=%s)",
                          query.query_id, start, stop, repairs.duplicates,
                          repairs.out_of_range, repairs.missing, repairs.fallback)
            ordered[start:stop] = perm.apply(window)
    return ordered


def merge_stages(pointwise_run: RunList, listwise_order: Sequence,
                 k: int) -> RunList:
    """Splice a listwise reordering of the top k back onto the pointwise run.

    Positions beyond k keep their pointwise order. Scores become a synthetic
    descending ramp (m, m-1, ..., 1) since the two stages' scores are not
    comparable.
    """
    head_ids = [getattr(d, "doc_id", d) for d in listwise_order]
    pointwise_ids = pointwise_run.doc_ids()
    expected = pointwise_ids[:k]
    if sorted(head_ids) != sorted(expected):
        raise DataError(
            f"listwise order for query {pointwise_run.query_id!r} is not a "
            f"permutation of the pointwise top {k}"
        )
    final_ids = head_ids + pointwise_ids[k:]
    m = len(final_ids)
    return RunList.from_scored(
        pointwise_run.query_id,
        [(doc_id, float(m - i)) for i, doc_id in enumerate(final_ids)],
    )
