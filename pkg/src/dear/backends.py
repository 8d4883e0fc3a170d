"""Chat backends for the listwise stage.

OpenAIChatBackend speaks the OpenAI-compatible chat completions protocol
over HTTP. The mock backends are deterministic stand-ins used by tests and
local pipelines: IdentityChatBackend echoes the presented order,
OracleChatBackend ranks by planted relevance grades, ScriptedChatBackend
replays a fixed response sequence.
"""

from __future__ import annotations

import os
import re
import threading
import time
from typing import Sequence

import httpx

from .errors import BackendError
from .listwise import SCAFFOLD, ListwisePrompt
from .retrieval import CorpusIndex, Query

_PASSAGE_LINE = re.compile(r"^\[(\d+)\] (.*)$")
_QUERY_LINE = "Search Query: "


def ranking_line(ids: Sequence[int]) -> str:
    return f"{SCAFFOLD} " + " > ".join(f"[{i}]" for i in ids)


class OpenAIChatBackend:
    """HTTP chat completions client.

    POSTs {"model", "messages", "temperature": 0} and reads
    choices[0].message.content. Transient failures (connection errors, 429,
    5xx) are retried with exponential backoff; anything else raises
    BackendError with the HTTP status attached. A semaphore caps in-flight
    requests so concurrent query reranking cannot stampede the endpoint.
    """

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 api_key_env: str = "DEAR_CHAT_API_KEY", timeout: float = 60.0,
                 max_retries: int = 3, backoff: float = 0.5,
                 max_in_flight: int = 4):
        self.url = url
        self.model = model
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

    def complete(self, prompt: ListwisePrompt) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": 0,
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
                raise BackendError(f"chat backend returned HTTP {response.status_code}",
                                   status=response.status_code)
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError):
                raise BackendError("chat backend returned a malformed completion",
                                   status=response.status_code) from None
        raise BackendError(f"chat backend failed after {self.max_retries + 1} attempts "
                           f"({last_error})", status=last_status)


def _parse_prompt(prompt: ListwisePrompt) -> tuple[str, list[str]]:
    """Recover (query text, ordered passage texts) from a rendered prompt."""
    query_text = None
    passages: list[str] = []
    for line in prompt.user.splitlines():
        match = _PASSAGE_LINE.match(line)
        if match and int(match.group(1)) == len(passages) + 1:
            passages.append(match.group(2))
        elif line.startswith(_QUERY_LINE):
            query_text = line[len(_QUERY_LINE):]
    if query_text is None or len(passages) != prompt.num_passages:
        raise BackendError("mock backend could not parse the prompt")
    return query_text, passages


class IdentityChatBackend:
    """Answers every prompt with the input order unchanged."""

    def complete(self, prompt: ListwisePrompt) -> str:
        return ("The passages are already in a reasonable order.\n"
                + ranking_line(range(1, prompt.num_passages + 1)))


class OracleChatBackend:
    """Ranks each window by planted relevance grades, ties keeping input
    order. Recovers documents by matching (possibly truncated) passage text
    back to the corpus, so it exercises the same prompts a real backend sees.
    """

    def __init__(self, corpus: CorpusIndex, queries: Sequence[Query],
                 relevance: dict[tuple[str, str], int],
                 reasoning: str = "The most relevant passages are listed first."):
        self._query_ids = {q.text: q.query_id for q in queries}
        self._doc_texts = [(" ".join(doc.text.split()), doc_id)
                           for doc_id, doc in corpus.documents.items()]
        self.relevance = relevance
        self.reasoning = reasoning

    def _doc_id_for(self, passage: str) -> str:
        if passage.endswith("..."):
            prefix = passage[:-3]
            matches = [d for text, d in self._doc_texts if text.startswith(prefix)]
        else:
            matches = [d for text, d in self._doc_texts if text == passage]
        if len(matches) != 1:
            raise BackendError(f"oracle matched {len(matches)} documents for a passage")
        return matches[0]

    def complete(self, prompt: ListwisePrompt) -> str:
        query_text, passages = _parse_prompt(prompt)
        query_id = self._query_ids.get(query_text)
        if query_id is None:
            raise BackendError(f"oracle does not know query {query_text!r}")
        grades = [self.relevance.get((query_id, self._doc_id_for(p)), 0)
                  for p in passages]
        order = sorted(range(1, len(passages) + 1),
                       key=lambda j: (-grades[j - 1], j))
        return f"{self.reasoning}\n{ranking_line(order)}"


class ScriptedChatBackend:
    """Replays a fixed sequence of responses; entries that are exceptions
    are raised instead. Exhausting the script raises unless cycle is set."""

    def __init__(self, script: Sequence[str | Exception], cycle: bool = False):
        if not script:
            raise ValueError("script cannot be empty")
        self.script = list(script)
        self.cycle = cycle
        self.calls = 0

    def complete(self, prompt: ListwisePrompt) -> str:
        index = self.calls
        if index >= len(self.script):
            if not self.cycle:
                raise BackendError("scripted backend exhausted its responses")
            index %= len(self.script)
        self.calls += 1
        entry = self.script[index]
        if isinstance(entry, Exception):
            raise entry
        return entry
