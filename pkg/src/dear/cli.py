"""Command-line surface. One subcommand per pipeline operation:

  index        build the in-memory index and report corpus statistics
  retrieve     BM25 first stage, writes a TREC run file
  train        distill the linear student against a planted teacher
  sweep-alpha  retrain across an alpha grid, emit alpha,ndcg10 CSV
  rerank       pointwise or listwise rerank of an existing run file
  synthgen     generate teacher-ranked listwise training examples
  eval         score a run file against qrels
  pipeline     full retrieve -> pointwise -> listwise run from a TOML config

Exit codes: 0 success, 2 configuration/usage error, 3 backend error,
4 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .distill import (TrainConfig, alpha_sweep, build_training_set,
                      train_student, write_alpha_csv)
from .errors import (BackendError, ConfigError, DataError, DearError,
                     SynthgenAborted, TrainingDiverged)
from .listwise import merge_stages, rerank_window
from .losses import LossConfig
from .metrics import ACCURACY_CUTOFFS, NDCG_CUTOFFS, evaluate
from .pipeline import (ListwiseSpec, PipelineConfig, PointwiseSpec,
                       build_chat_backend, build_pointwise_scorer,
                       run_pipeline)
from .retrieval import (Query, bm25_search, ingest_corpus, read_qrels,
                        read_queries, read_run, write_runs)
from .scorers import LinearScorer, rerank_pointwise
from .synthgen import generate_examples, write_examples

log = logging.getLogger(__name__)


def _load_corpus(args):
    return ingest_corpus(args.corpus, format=args.corpus_format)


def cmd_index(args) -> int:
    corpus = _load_corpus(args)
    stats = {
        "documents": corpus.doc_count,
        "unique_terms": len(corpus.postings),
        "postings": sum(len(p) for p in corpus.postings.values()),
        "avg_doc_length": corpus.avg_doc_length,
    }
    rendered = json.dumps(stats, indent=2)
    if args.out:
        Path(args.out).write_text(rendered + "\n", encoding="utf-8")
    print(rendered)
    return 0


def cmd_retrieve(args) -> int:
    corpus = _load_corpus(args)
    queries = read_queries(args.queries)
    runs = [bm25_search(corpus, q, top_k=args.top_k) for q in queries]
    write_runs(runs, args.tag, args.out)
    print(f"wrote {args.out} ({len(runs)} queries)")
    return 0


def _loss_config(args) -> LossConfig:
    return LossConfig(alpha=args.alpha, tau=args.tau,
                      rank_loss=args.rank_loss, kd_reverse=args.kd_reverse)


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            loss_cfg=_loss_config(args),
            learning_rate=args.learning_rate,
            epochs=args.epochs,
            batch_size=args.batch_size,
            weight_decay=args.weight_decay,
            seed=args.seed,
            lr_schedule=args.lr_schedule,
            holdout_fraction=args.holdout_fraction,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _training_rows(args, corpus):
    queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels)
    teacher = build_pointwise_scorer(
        PointwiseSpec(type="planted", noise_sigma=args.noise_sigma,
                      scale=args.scale, seed=args.teacher_seed),
        corpus, qrels)
    rows, report = build_training_set(
        corpus, queries, teacher, negatives_per_query=args.negatives,
        seed=args.seed, relevance=qrels.grades,
        first_stage_top_k=args.first_stage_top_k)
    if report.skipped_no_positive or report.skipped_short_candidates:
        log.warning("skipped %d queries without positives, %d with too few "
                    "candidates", report.skipped_no_positive,
                    report.skipped_short_candidates)
    return rows


def cmd_train(args) -> int:
    corpus = _load_corpus(args)
    rows = _training_rows(args, corpus)
    report = train_student(rows, _train_config(args))
    scorer = LinearScorer(report.weights, corpus,
                          report.feature_means, report.feature_stds)
    scorer.save(args.model_out)
    if args.report_out:
        report.save(args.report_out)
    tau = report.holdout_tau[-1]
    print(f"trained on {report.n_train} queries (holdout {report.n_holdout}); "
          f"loss {report.initial_loss:.6f} -> {report.epoch_losses[-1]:.6f}; "
          f"holdout tau {'n/a' if tau is None else f'{tau:.4f}'}")
    print(f"wrote {args.model_out}")
    return 0


def cmd_sweep_alpha(args) -> int:
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError:
        raise ConfigError(f"could not parse --alphas {args.alphas!r}") from None
    if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ConfigError("--alphas must be comma-separated values in [0, 1]")
    corpus = _load_corpus(args)
    rows = _training_rows(args, corpus)
    table = alpha_sweep(rows, alphas, _train_config(args))
    write_alpha_csv(table, args.out)
    for alpha, ndcg in table:
        print(f"alpha={alpha:g} ndcg10={ndcg:.6f}")
    print(f"wrote {args.out}")
    return 0


def _pointwise_spec(args) -> PointwiseSpec:
    return PointwiseSpec(type=args.scorer, model=args.model,
                         noise_sigma=args.noise_sigma, scale=args.scale,
                         seed=args.teacher_seed, url=args.url)


def _listwise_spec(args) -> ListwiseSpec:
    return ListwiseSpec(type=args.backend, url=args.url,
                        model=args.model_name, mode=args.mode,
                        token_budget=args.token_budget, window=args.window,
                        stride=args.stride, passes=args.passes)


def cmd_rerank(args) -> int:
    corpus = _load_corpus(args)
    queries = {q.query_id: q for q in read_queries(args.queries)}
    runs = read_run(args.run)
    missing = [r.query_id for r in runs if r.query_id not in queries]
    if missing:
        raise DataError(f"run references unknown queries: {', '.join(missing)}")
    qrels = read_qrels(args.qrels) if args.qrels else None

    if args.stage == "pointwise":
        scorer = build_pointwise_scorer(_pointwise_spec(args), corpus, qrels)
        out_runs = [rerank_pointwise(scorer, run, corpus, queries[run.query_id])
                    for run in runs]
    else:
        spec = _listwise_spec(args)
        backend = build_chat_backend(spec, corpus, list(queries.values()), qrels)
        window_cfg = spec.window_config(args.listwise_k)
        out_runs = []
        for run in runs:
            if not run.entries:
                out_runs.append(run)
                continue
            k = min(args.listwise_k, len(run.entries))
            head = corpus.resolve(run.doc_ids()[:k])
            reordered = rerank_window(backend, queries[run.query_id], head,
                                      window_cfg, mode=spec.mode,
                                      token_budget=spec.token_budget)
            out_runs.append(merge_stages(run, reordered, k))
    write_runs(out_runs, args.tag, args.out)
    print(f"wrote {args.out} ({len(out_runs)} queries)")
    return 0


def cmd_synthgen(args) -> int:
    corpus = _load_corpus(args)
    queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels) if args.qrels else None
    spec = ListwiseSpec(type=args.backend, url=args.url, model=args.model_name,
                        mode=args.mode)
    backend = build_chat_backend(spec, corpus, queries, qrels)
    examples, report = generate_examples(
        queries, corpus, backend, target_count=args.target_count,
        per_query_candidates=args.per_query_candidates, seed=args.seed,
        teacher_model=args.teacher_model, mode=args.mode)
    write_examples(examples, args.out)
    print(json.dumps({
        "accepted": report.accepted,
        "attempts": report.attempts,
        "rejected_repairs": report.rejected_repairs,
        "rejected_empty_reasoning": report.rejected_empty_reasoning,
        "backend_failures": report.backend_failures,
        "no_candidates": report.no_candidates,
    }, indent=2))
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    runs = read_run(args.run)
    qrels = read_qrels(args.qrels)
    if args.queries:
        queries = read_queries(args.queries)
        known = {q.query_id for q in queries}
        queries += [Query(query_id=r.query_id, text="")
                    for r in runs if r.query_id not in known]
    else:
        queries = [Query(query_id=r.query_id, text="") for r in runs]
    corpus = _load_corpus(args) if args.corpus else None
    report = evaluate(runs, qrels, queries,
                      ndcg_cutoffs=_cutoffs(args.ndcg_cutoffs),
                      accuracy_cutoffs=_cutoffs(args.accuracy_cutoffs),
                      corpus=corpus, linear_gain=args.linear_gain)
    if args.json_out:
        report.save(args.json_out)
    print(report.table())
    return 0


def _cutoffs(raw: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"could not parse cutoffs {raw!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError("cutoffs must be positive integers")
    return values


def cmd_pipeline(args) -> int:
    config = PipelineConfig.from_toml(args.config)
    overrides = {}
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        config = dataclasses.replace(config, **overrides)
    result = run_pipeline(config)
    for stage, path in result.run_paths.items():
        print(f"{stage}: {path}")
    for stage, report in result.reports.items():
        print(f"\n[{stage}]")
        print(report.table())
    if result.report_path:
        print(f"\nreport: {result.report_path}")
    return 0


def _add_corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="corpus file")
    parser.add_argument("--corpus-format", choices=("jsonl", "tsv"),
                        default="jsonl", help="corpus file format")


def _add_train_args(parser: argparse.ArgumentParser) -> None:
    _add_corpus_args(parser)
    parser.add_argument("--queries", required=True)
    parser.add_argument("--qrels", required=True,
                        help="graded judgments; the planted teacher scores from these")
    parser.add_argument("--negatives", type=int, default=7,
                        help="negatives sampled per query")
    parser.add_argument("--first-stage-top-k", type=int, default=100,
                        help="BM25 pool negatives are sampled from")
    parser.add_argument("--alpha", type=float, default=0.1)
    parser.add_argument("--tau", type=float, default=1.0)
    parser.add_argument("--rank-loss", choices=("point_ce", "ranknet"),
                        default="point_ce")
    parser.add_argument("--kd-reverse", action="store_true",
                        help="use KL(teacher || student) instead")
    parser.add_argument("--learning-rate", type=float, default=1e-2)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--weight-decay", type=float, default=0.1)
    parser.add_argument("--lr-schedule", choices=("constant", "linear_decay"),
                        default="constant")
    parser.add_argument("--holdout-fraction", type=float, default=0.2)
    parser.add_argument("--noise-sigma", type=float, default=0.0,
                        help="teacher score noise")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="teacher score per grade unit")
    parser.add_argument("--teacher-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dear",
        description="Dual-stage reranking toolkit: BM25 retrieval, distilled "
                    "pointwise scoring, listwise chat reranking.")
    parser.add_argument("--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build the index, print corpus stats")
    _add_corpus_args(p)
    p.add_argument("--out", help="also write the stats JSON here")
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser("retrieve", help="BM25 retrieval to a TREC run file")
    _add_corpus_args(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--tag", default="bm25", help="TREC run tag column")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("train", help="distill the linear student scorer")
    _add_train_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True, help="weights JSON path")
    p.add_argument("--report-out", help="training report JSON path")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sweep-alpha", help="retrain across an alpha grid")
    _add_train_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alphas", default="0.1,0.2,0.3,0.4,0.5",
                   help="comma-separated values in [0,1]")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(handler=cmd_sweep_alpha)

    p = sub.add_parser("rerank", help="rerank an existing run file")
    _add_corpus_args(p)
    p.add_argument("--stage", choices=("pointwise", "listwise"), required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--run", required=True, help="input TREC run file")
    p.add_argument("--out", required=True)
    p.add_argument("--tag", default="dear")
    p.add_argument("--qrels", help="needed by planted scorer / oracle backend")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    p.add_argument("--scorer", choices=("planted", "linear", "remote"),
                   default="linear", help="pointwise scorer type")
    p.add_argument("--model", help="linear scorer weights JSON")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--teacher-seed", type=int, default=0)
    p.add_argument("--backend", choices=("identity", "oracle", "openai"),
                   default="identity", help="listwise chat backend")
    p.add_argument("--url", help="remote scorer / chat endpoint URL")
    p.add_argument("--model-name", help="chat model name")
    p.add_argument("--listwise-k", type=int, default=30,
                   help="head size handed to the listwise stage")
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--mode", choices=("rank_only", "cot"), default="cot")
    p.add_argument("--token-budget", type=int, default=300)
    p.set_defaults(handler=cmd_rerank)

    p = sub.add_parser("synthgen", help="generate listwise training examples")
    _add_corpus_args(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", help="needed by the oracle backend")
    p.add_argument("--backend", choices=("identity", "oracle", "openai"),
                   default="oracle")
    p.add_argument("--url")
    p.add_argument("--model-name")
    p.add_argument("--target-count", type=int, default=200)
    p.add_argument("--per-query-candidates", type=int, default=20)
    p.add_argument("--teacher-model", default="mock",
                   help="label recorded on each example")
    p.add_argument("--mode", choices=("rank_only", "cot"), default="cot")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="examples JSONL path")
    p.set_defaults(handler=cmd_synthgen)

    p = sub.add_parser("eval", help="evaluate a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--queries", help="needed for Top-k answer accuracy")
    p.add_argument("--corpus", help="needed for Top-k answer accuracy")
    p.add_argument("--corpus-format", choices=("jsonl", "tsv"), default="jsonl")
    p.add_argument("--ndcg-cutoffs", default=",".join(map(str, NDCG_CUTOFFS)))
    p.add_argument("--accuracy-cutoffs",
                   default=",".join(map(str, ACCURACY_CUTOFFS)))
    p.add_argument("--linear-gain", action="store_true",
                   help="use rel instead of 2^rel - 1 as the nDCG gain")
    p.add_argument("--json-out", help="write the full report JSON here")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("pipeline", help="run retrieve -> pointwise -> listwise")
    p.add_argument("--config", required=True, help="TOML pipeline config")
    p.add_argument("--output-dir", help="override [pipeline].output_dir")
    p.add_argument("--seed", type=int, help="override [pipeline].seed")
    p.add_argument("--workers", type=int, help="override [pipeline].workers")
    p.set_defaults(handler=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, SynthgenAborted) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except (DataError, TrainingDiverged) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DearError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
