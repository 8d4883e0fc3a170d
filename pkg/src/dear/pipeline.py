"""Three-stage retrieval pipeline: BM25 retrieve, pointwise rerank, listwise
rerank, with per-stage TREC run files and evaluation.

The pipeline is driven by a declarative config (TOML on disk or a plain
dict) so an experiment is a diffable artifact. Each stage writes its run
file incrementally, one query at a time; a failure mid-stage leaves the
completed queries' lines on disk and aborts before later stages run.
"""

from __future__ import annotations

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import IdentityChatBackend, OpenAIChatBackend, OracleChatBackend
from .errors import ConfigError
from .listwise import (ChatBackend, WindowConfig, merge_stages, rerank_window)
from .metrics import ACCURACY_CUTOFFS, NDCG_CUTOFFS, EvalReport, evaluate
from .retrieval import (CorpusIndex, Qrels, Query, RunList, bm25_search,
                        format_run_line, ingest_corpus, read_qrels,
                        read_queries)
from .scorers import (LinearScorer, PlantedTeacher, RemoteScorer, Scorer,
                      rerank_pointwise)

log = logging.getLogger(__name__)

STAGES = ("bm25", "dearp", "dearl")

POINTWISE_TYPES = ("planted", "linear", "remote")
LISTWISE_TYPES = ("identity", "oracle", "openai")


def _take(section: dict, name: str, allowed: Sequence[str]) -> None:
    unknown = [k for k in section if k not in allowed]
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class PointwiseSpec:
    """Which pointwise scorer the pipeline builds for stage 2."""

    type: str = "planted"
    model: str | None = None          # linear: weights JSON path
    noise_sigma: float = 0.0          # planted
    scale: float = 1.0                # planted
    seed: int = 0                     # planted noise seed
    url: str | None = None            # remote
    template: str | None = None       # remote
    api_key_env: str = "DEAR_SCORER_API_KEY"

    def __post_init__(self):
        if self.type not in POINTWISE_TYPES:
            raise ConfigError(f"pointwise type must be one of {POINTWISE_TYPES}")
        if self.type == "linear" and not self.model:
            raise ConfigError("pointwise type linear needs model = <weights path>")
        if self.type == "remote" and not self.url:
            raise ConfigError("pointwise type remote needs url")


@dataclass(frozen=True)
class ListwiseSpec:
    """Which chat backend reorders the listwise window in stage 3."""

    type: str = "identity"
    url: str | None = None            # openai
    model: str | None = None          # openai
    api_key_env: str = "DEAR_CHAT_API_KEY"
    mode: str = "cot"
    token_budget: int = 300
    window: int = 20
    stride: int = 10
    passes: int = 1

    def __post_init__(self):
        if self.type not in LISTWISE_TYPES:
            raise ConfigError(f"listwise type must be one of {LISTWISE_TYPES}")
        if self.type == "openai" and (not self.url or not self.model):
            raise ConfigError("listwise type openai needs url and model")

    def window_config(self, candidates: int) -> WindowConfig:
        try:
            return WindowConfig(window=self.window, stride=self.stride,
                                candidates=candidates, passes=self.passes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str
    queries: str
    qrels: str | None = None
    corpus_format: str = "jsonl"
    output_dir: str = "."
    run_tag: str = "dear"
    seed: int = 0
    first_stage_top_k: int = 100
    listwise_k: int = 30
    workers: int = 1
    pointwise: PointwiseSpec = field(default_factory=PointwiseSpec)
    listwise: ListwiseSpec | None = None
    ndcg_cutoffs: tuple[int, ...] = NDCG_CUTOFFS
    accuracy_cutoffs: tuple[int, ...] = ACCURACY_CUTOFFS

    def __post_init__(self):
        if self.first_stage_top_k < 1:
            raise ConfigError("first_stage_top_k must be >= 1")
        if not 1 <= self.listwise_k <= self.first_stage_top_k:
            raise ConfigError("listwise_k must be in 1..first_stage_top_k")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.corpus_format not in ("jsonl", "tsv"):
            raise ConfigError("corpus_format must be jsonl or tsv")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        _take(raw, "config", ["data", "pipeline", "pointwise", "listwise",
                              "metrics"])
        data = dict(raw.get("data", {}))
        _take(data, "data", ["corpus", "corpus_format", "queries", "qrels"])
        if "corpus" not in data or "queries" not in data:
            raise ConfigError("[data] needs corpus and queries paths")
        pipe = dict(raw.get("pipeline", {}))
        _take(pipe, "pipeline", ["output_dir", "run_tag", "seed",
                                 "first_stage_top_k", "listwise_k", "workers"])
        point = dict(raw.get("pointwise", {}))
        _take(point, "pointwise", ["type", "model", "noise_sigma", "scale",
                                   "seed", "url", "template", "api_key_env"])
        metrics = dict(raw.get("metrics", {}))
        _take(metrics, "metrics", ["ndcg_cutoffs", "accuracy_cutoffs"])
        listwise = None
        if "listwise" in raw:
            lw = dict(raw["listwise"])
            _take(lw, "listwise", ["type", "url", "model", "api_key_env",
                                   "mode", "token_budget", "window", "stride",
                                   "passes"])
            listwise = ListwiseSpec(**lw)
        return cls(
            corpus=data["corpus"],
            queries=data["queries"],
            qrels=data.get("qrels"),
            corpus_format=data.get("corpus_format", "jsonl"),
            output_dir=pipe.get("output_dir", "."),
            run_tag=pipe.get("run_tag", "dear"),
            seed=pipe.get("seed", 0),
            first_stage_top_k=pipe.get("first_stage_top_k", 100),
            listwise_k=pipe.get("listwise_k", 30),
            workers=pipe.get("workers", 1),
            pointwise=PointwiseSpec(**point),
            listwise=listwise,
            ndcg_cutoffs=tuple(metrics.get("ndcg_cutoffs", NDCG_CUTOFFS)),
            accuracy_cutoffs=tuple(metrics.get("accuracy_cutoffs",
                                               ACCURACY_CUTOFFS)),
        )

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from None
        return cls.from_dict(raw)


def build_pointwise_scorer(spec: PointwiseSpec, corpus: CorpusIndex,
                           qrels: Qrels | None) -> Scorer:
    if spec.type == "planted":
        if qrels is None:
            raise ConfigError("pointwise type planted needs a qrels path")
        return PlantedTeacher(relevance_map=qrels.grades,
                              noise_sigma=spec.noise_sigma, scale=spec.scale,
                              seed=spec.seed)
    if spec.type == "linear":
        try:
            return LinearScorer.load(spec.model, corpus)
        except FileNotFoundError:
            raise ConfigError(f"model file not found: {spec.model}") from None
    return RemoteScorer(url=spec.url, api_key_env=spec.api_key_env,
                        **({"template": spec.template} if spec.template else {}))


def build_chat_backend(spec: ListwiseSpec, corpus: CorpusIndex,
                       queries: Sequence[Query],
                       qrels: Qrels | None) -> ChatBackend:
    if spec.type == "identity":
        return IdentityChatBackend()
    if spec.type == "oracle":
        if qrels is None:
            raise ConfigError("listwise type oracle needs a qrels path")
        return OracleChatBackend(corpus, queries, qrels.grades)
    return OpenAIChatBackend(url=spec.url, model=spec.model,
                             api_key_env=spec.api_key_env)


@dataclass
class PipelineResult:
    """Runs, file paths and (when qrels were given) reports per stage."""

    runs: dict[str, list[RunList]]
    run_paths: dict[str, Path]
    reports: dict[str, EvalReport]
    report_path: Path | None = None


def _flush_run(fh: TextIO, run: RunList, tag: str) -> None:
    for entry in run.entries:
        fh.write(format_run_line(run.query_id, entry, tag) + "\n")
    fh.flush()


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Execute retrieve, pointwise rerank and (optionally) listwise rerank.

    Emits run.bm25 / run.dearp / run.dearl under output_dir, evaluates every
    produced stage when qrels are configured, and returns all of it. With
    local scorers and backends the outputs are byte-stable for a fixed
    config and seed.
    """
    for label, path in (("corpus", config.corpus), ("queries", config.queries),
                        ("qrels", config.qrels)):
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{label} path does not exist: {path}")

    corpus = ingest_corpus(config.corpus, format=config.corpus_format)
    queries = read_queries(config.queries)
    qrels = read_qrels(config.qrels) if config.qrels else None
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs: dict[str, list[RunList]] = {}
    run_paths: dict[str, Path] = {}

    def run_stage(stage: str, produce) -> list[RunList]:
        """Write one stage's run file incrementally so completed queries
        survive an abort."""
        path = out_dir / f"run.{stage}"
        produced: list[RunList] = []
        with open(path, "w", encoding="utf-8") as fh:
            for run in produce():
                produced.append(run)
                _flush_run(fh, run, f"{config.run_tag}-{stage}")
        runs[stage] = produced
        run_paths[stage] = path
        log.info("stage %s: wrote %s (%d queries)", stage, path, len(produced))
        return produced

    def stage_bm25():
        for query in queries:
            yield bm25_search(corpus, query, top_k=config.first_stage_top_k)

    bm25_runs = run_stage("bm25", stage_bm25)

    scorer = build_pointwise_scorer(config.pointwise, corpus, qrels)

    def stage_dearp():
        for query, run in zip(queries, bm25_runs):
            yield rerank_pointwise(scorer, run, corpus, query)

    dearp_runs = run_stage("dearp", stage_dearp)

    if config.listwise is not None:
        backend = build_chat_backend(config.listwise, corpus, queries, qrels)
        window_cfg = config.listwise.window_config(config.listwise_k)
        spec = config.listwise

        def listwise_one(query: Query, run: RunList) -> RunList:
            if not run.entries:
                return run
            k = min(window_cfg.candidates, len(run.entries))
            head = corpus.resolve(run.doc_ids()[:k])
            reordered = rerank_window(backend, query, head, window_cfg,
                                      mode=spec.mode,
                                      token_budget=spec.token_budget)
            return merge_stages(run, reordered, k)

        def stage_dearl():
            if config.workers == 1:
                for query, run in zip(queries, dearp_runs):
                    yield listwise_one(query, run)
            else:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    yield from pool.map(listwise_one, queries, dearp_runs)

        run_stage("dearl", stage_dearl)

    reports: dict[str, EvalReport] = {}
    report_path = None
    if qrels is not None:
        for stage, stage_runs in runs.items():
            reports[stage] = evaluate(
                stage_runs, qrels, queries, ndcg_cutoffs=config.ndcg_cutoffs,
                accuracy_cutoffs=config.accuracy_cutoffs, corpus=corpus)
        report_path = out_dir / "report.json"
        payload = {stage: report.to_dict() for stage, report in reports.items()}
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return PipelineResult(runs=runs, run_paths=run_paths, reports=reports,
                          report_path=report_path)
