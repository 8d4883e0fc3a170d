"""Dual-stage reranking toolkit.

Stage 1 distills a frozen teacher into a small pointwise scorer with an
alpha-mixed ranking + KL objective; stage 2 reorders the pointwise head
with listwise chat prompts over sliding windows. The package also ships
BM25 retrieval, TREC-format I/O, nDCG/Top-k evaluation, planted-relevance
fixtures and a declarative pipeline runner.
"""

from .backends import (IdentityChatBackend, OpenAIChatBackend,
                       OracleChatBackend, ScriptedChatBackend)
from .distill import (BuildReport, TrainConfig, TrainingBatch, TrainReport,
                      alpha_sweep, build_training_set, train_student,
                      write_alpha_csv)
from .errors import (BackendError, ConfigError, DataError, DearError,
                     SynthgenAborted, TrainingDiverged)
from .listwise import (ChatBackend, ListwisePrompt, Permutation,
                       RepairReport, WindowConfig, build_prompt,
                       merge_stages, parse_permutation, rerank_window)
from .losses import (LabelVector, LossConfig, RankVector, ScoreMatrix,
                     kd_loss, point_ce, ranknet, total_loss)
from .metrics import (EvalReport, dcg_term, evaluate, ndcg_at_k,
                      top_k_accuracy)
from .pipeline import (ListwiseSpec, PipelineConfig, PipelineResult,
                       PointwiseSpec, run_pipeline)
from .planted import (PlantedFixture, make_benchmark_fixture,
                      make_distill_fixture)
from .retrieval import (CorpusIndex, Document, Qrels, Query, RunEntry,
                        RunList, bm25_score, bm25_search, ingest_corpus,
                        read_qrels, read_queries, read_run, tokenize,
                        write_corpus, write_qrels, write_queries, write_run,
                        write_runs)
from .scorers import (FEATURE_NAMES, LinearScorer, PlantedTeacher,
                      RemoteScorer, ScoreRequest, Scorer, extract_features,
                      fit_standardizer, rerank_pointwise, stable_rng,
                      standardize)
from .synthgen import (GenerationReport, SyntheticExample, generate_examples,
                       read_examples, write_examples)

__version__ = "0.1.0"

__all__ = [
    "BackendError", "BuildReport", "ChatBackend", "ConfigError",
    "CorpusIndex", "DataError", "DearError", "Document", "EvalReport",
    "FEATURE_NAMES", "GenerationReport", "IdentityChatBackend",
    "LabelVector", "LinearScorer", "ListwisePrompt", "ListwiseSpec",
    "LossConfig", "OpenAIChatBackend", "OracleChatBackend", "Permutation",
    "PipelineConfig", "PipelineResult", "PlantedFixture", "PlantedTeacher",
    "PointwiseSpec", "Qrels", "Query", "RankVector", "RemoteScorer",
    "RepairReport", "RunEntry", "RunList", "ScoreMatrix", "ScoreRequest",
    "Scorer", "ScriptedChatBackend", "SynthgenAborted", "SyntheticExample",
    "TrainConfig", "TrainReport", "TrainingBatch", "TrainingDiverged",
    "WindowConfig", "alpha_sweep", "bm25_score", "bm25_search",
    "build_prompt", "build_training_set", "dcg_term", "evaluate",
    "extract_features", "fit_standardizer", "generate_examples",
    "ingest_corpus", "kd_loss", "make_benchmark_fixture",
    "make_distill_fixture", "merge_stages", "ndcg_at_k", "parse_permutation",
    "point_ce", "ranknet", "read_examples", "read_qrels", "read_queries",
    "read_run", "rerank_pointwise", "rerank_window", "run_pipeline",
    "stable_rng", "standardize", "tokenize", "top_k_accuracy", "total_loss",
    "train_student", "write_alpha_csv", "write_corpus", "write_examples",
    "write_qrels", "write_queries", "write_run", "write_runs",
]
