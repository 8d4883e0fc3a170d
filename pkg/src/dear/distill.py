"""Distillation training loop for the linear student scorer.

build_training_set assembles one row per query (one positive, sampled
negatives, frozen teacher scores). train_student runs deterministic
minibatch gradient descent with decoupled weight decay on the alpha-mixed
objective, standardizing features with statistics from the training split.
alpha_sweep retrains across a grid of alpha values and reports held-out
nDCG@10 per value.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import kendalltau

from .errors import DataError, TrainingDiverged
from .losses import LabelVector, LossConfig, ScoreMatrix, total_loss
from .metrics import dcg_term
from .retrieval import CorpusIndex, Query, bm25_search
from .scorers import (FEATURE_DIM, ScoreRequest, Scorer, extract_features,
                      fit_standardizer, stable_rng, standardize)

log = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "linear_decay")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings for the linear student.

    The defaults keep the reference recipe's batch size, epoch count and
    weight decay but use plain gradient descent at lr=1e-2 on standardized
    features; a 5-weight convex model does not need Adam.
    """

    loss_cfg: LossConfig = field(default_factory=LossConfig)
    learning_rate: float = 1e-2
    epochs: int = 3
    batch_size: int = 8
    weight_decay: float = 0.1
    seed: int = 0
    lr_schedule: str = "constant"
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")


@dataclass
class TrainingBatch:
    """One training row: a query with m candidates, binary labels and the
    teacher's frozen scores, feature matrix m x 5 (raw, unstandardized)."""

    query: Query
    doc_ids: tuple[str, ...]
    features: np.ndarray
    labels: LabelVector
    teacher_scores: np.ndarray

    def __post_init__(self):
        m = len(self.doc_ids)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.teacher_scores = np.asarray(self.teacher_scores, dtype=np.float64)
        if m == 0:
            raise ValueError("training row needs at least one document")
        if self.features.shape != (m, FEATURE_DIM):
            raise ValueError(f"features must have shape ({m}, {FEATURE_DIM})")
        if len(self.labels.labels) != m or self.teacher_scores.shape != (m,):
            raise ValueError("labels and teacher scores must align with doc_ids")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(self.teacher_scores)):
            raise ValueError("teacher scores must be finite")


@dataclass
class BuildReport:
    """Queries dropped while assembling the training set, by reason."""

    rows: int = 0
    skipped_no_positive: int = 0
    skipped_short_candidates: int = 0


def build_training_set(
    corpus: CorpusIndex,
    queries: Sequence[Query],
    teacher: Scorer,
    negatives_per_query: int,
    seed: int,
    relevance: dict[tuple[str, str], int] | None = None,
    first_stage_top_k: int = 100,
) -> tuple[list[TrainingBatch], BuildReport]:
    """One row per query: the highest-grade positive plus negatives sampled
    without replacement from the BM25 top candidates, teacher scores attached.

    Relevance grades default to the teacher's planted map. Queries with no
    positive grade or too few candidate negatives are skipped and counted.
    Sampling is keyed per query so the result is independent of query order.
    """
    if negatives_per_query < 0:
        raise ValueError("negatives_per_query must be >= 0")
    if relevance is None:
        relevance = getattr(teacher, "relevance_map", None)
        if relevance is None:
            raise DataError("no relevance grades: pass relevance= or use a "
                            "teacher with a planted relevance_map")
    report = BuildReport()
    rows: list[TrainingBatch] = []
    for query in queries:
        graded = [(grade, did) for (qid, did), grade in relevance.items()
                  if qid == query.query_id and grade > 0]
        if not graded:
            report.skipped_no_positive += 1
            log.warning("query %s has no positively graded document, skipping",
                        query.query_id)
            continue
        # deterministic positive: highest grade, smallest doc_id on ties
        _, positive = min(graded, key=lambda g: (-g[0], g[1]))
        candidates = [d for d in bm25_search(corpus, query,
                                             top_k=first_stage_top_k).doc_ids()
                      if d != positive]
        if len(candidates) < negatives_per_query:
            report.skipped_short_candidates += 1
            log.warning("query %s has only %d candidate negatives, needs %d; "
                        "skipping", query.query_id, len(candidates),
                        negatives_per_query)
            continue
        rng = stable_rng(seed, "negatives", query.query_id)
        picked = rng.choice(len(candidates), size=negatives_per_query,
                            replace=False)
        doc_ids = (positive, *[candidates[i] for i in sorted(picked)])
        documents = tuple(corpus.resolve(doc_ids))
        features = np.stack([extract_features(corpus, query, d)
                             for d in documents])
        teacher_scores = teacher.score_batch(
            ScoreRequest(query=query, documents=documents))
        labels = LabelVector(labels=(1,) + (0,) * negatives_per_query)
        rows.append(TrainingBatch(query=query, doc_ids=doc_ids,
                                  features=features, labels=labels,
                                  teacher_scores=teacher_scores))
        report.rows += 1
    return rows, report


@dataclass
class TrainReport:
    """Everything train_student learned: loss trace, held-out agreement,
    final weights and the standardization statistics they expect."""

    initial_loss: float
    epoch_losses: list[float]
    holdout_tau: list[float | None]
    weights: list[float]
    feature_means: list[float]
    feature_stds: list[float]
    n_train: int
    n_holdout: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _split_holdout(n_rows: int, fraction: float,
                   rng: np.random.Generator) -> tuple[list[int], list[int]]:
    order = list(rng.permutation(n_rows))
    n_holdout = int(round(fraction * n_rows))
    if n_holdout >= n_rows:
        n_holdout = n_rows - 1
    return order[n_holdout:], order[:n_holdout]


def _mean_loss(weights: np.ndarray, features: np.ndarray,
               teacher: np.ndarray, labels: list[LabelVector],
               cfg: LossConfig) -> float:
    student = features @ weights
    loss, _ = total_loss(ScoreMatrix(student=student, teacher=teacher),
                         labels, cfg)
    return loss


def _holdout_tau(weights: np.ndarray, features: np.ndarray,
                 teacher: np.ndarray) -> float | None:
    """Mean per-row Kendall-tau between student and teacher scores."""
    if features.shape[0] == 0:
        return None
    taus = []
    for i in range(features.shape[0]):
        student = features[i] @ weights
        tau = kendalltau(student, teacher[i]).statistic
        if not math.isnan(tau):
            taus.append(tau)
    return float(np.mean(taus)) if taus else None


def train_student(data: Sequence[TrainingBatch], cfg: TrainConfig) -> TrainReport:
    """Minibatch gradient descent from zero weights.

    Deterministic given the seed: the holdout split and every epoch's
    shuffle come from one seeded generator. The update applies decoupled
    weight decay, w <- w - lr * (grad + weight_decay * w), and the teacher
    scores are never touched. If the loss, the student scores or the
    weights go non-finite, training aborts with TrainingDiverged carrying
    the last finite loss.
    """
    rows = list(data)
    if not rows:
        raise DataError("training set is empty")
    m = len(rows[0].doc_ids)
    if any(len(r.doc_ids) != m for r in rows):
        raise DataError("all training rows must have the same candidate count")

    rng = np.random.default_rng(cfg.seed)
    train_idx, holdout_idx = _split_holdout(len(rows), cfg.holdout_fraction, rng)

    raw = np.stack([r.features for r in rows])          # n x m x 5
    teacher = np.stack([r.teacher_scores for r in rows])  # n x m
    means, stds = fit_standardizer(raw[train_idx].reshape(-1, FEATURE_DIM))
    feats = standardize(raw, means, stds)

    train_feats = feats[train_idx]
    train_teacher = teacher[train_idx]
    train_labels = [rows[i].labels for i in train_idx]
    holdout_feats = feats[holdout_idx]
    holdout_teacher = teacher[holdout_idx]

    weights = np.zeros(FEATURE_DIM)
    n_train = len(train_idx)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    initial_loss = _mean_loss(weights, train_feats, train_teacher,
                              train_labels, cfg.loss_cfg)
    last_finite = initial_loss

    epoch_losses: list[float] = []
    holdout_tau: list[float | None] = []
    step = 0
    # overflow on a diverging run is expected and surfaces as
    # TrainingDiverged, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            order = rng.permutation(n_train)
            for lo in range(0, n_train, cfg.batch_size):
                batch = order[lo:lo + cfg.batch_size]
                student = train_feats[batch] @ weights
                if not np.all(np.isfinite(student)):
                    raise TrainingDiverged(
                        f"student scores became non-finite at step {step}",
                        last_finite_loss=last_finite)
                loss, grad = total_loss(
                    ScoreMatrix(student=student, teacher=train_teacher[batch]),
                    [train_labels[i] for i in batch], cfg.loss_cfg)
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"loss became non-finite at step {step}",
                        last_finite_loss=last_finite)
                last_finite = loss
                grad_w = np.einsum("bm,bmf->f", grad, train_feats[batch])
                lr = cfg.learning_rate
                if cfg.lr_schedule == "linear_decay":
                    lr *= 1.0 - step / total_steps
                weights -= lr * (grad_w + cfg.weight_decay * weights)
                if not np.all(np.isfinite(weights)):
                    raise TrainingDiverged(
                        f"weights became non-finite at step {step}",
                        last_finite_loss=last_finite)
                step += 1
            epoch_losses.append(_mean_loss(weights, train_feats, train_teacher,
                                           train_labels, cfg.loss_cfg))
            holdout_tau.append(_holdout_tau(weights, holdout_feats,
                                            holdout_teacher))

    return TrainReport(
        initial_loss=initial_loss,
        epoch_losses=epoch_losses,
        holdout_tau=holdout_tau,
        weights=weights.tolist(),
        feature_means=means.tolist(),
        feature_stds=stds.tolist(),
        n_train=n_train,
        n_holdout=len(holdout_idx),
    )


def _holdout_ndcg10(report: TrainReport, rows: Sequence[TrainingBatch],
                    cfg: TrainConfig) -> float:
    """nDCG@10 of the trained student on the holdout rows, binary labels as
    grades. The split is replayed from the config seed, matching the one
    train_student used."""
    rng = np.random.default_rng(cfg.seed)
    _, holdout_idx = _split_holdout(len(rows), cfg.holdout_fraction, rng)
    if not holdout_idx:
        return float("nan")
    weights = np.asarray(report.weights)
    means = np.asarray(report.feature_means)
    stds = np.asarray(report.feature_stds)
    values = []
    for i in holdout_idx:
        row = rows[i]
        scores = standardize(row.features, means, stds) @ weights
        order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
        rels = row.labels.as_array()
        dcg = sum(dcg_term(int(rels[j]), pos)
                  for pos, j in enumerate(order[:10], start=1))
        ideal = sorted(rels, reverse=True)
        idcg = sum(dcg_term(int(r), pos)
                   for pos, r in enumerate(ideal[:10], start=1))
        values.append(dcg / idcg if idcg > 0 else 0.0)
    return float(np.mean(values))


def alpha_sweep(data: Sequence[TrainingBatch], alphas: Sequence[float],
                cfg: TrainConfig) -> list[tuple[float, float]]:
    """Retrain the student for each alpha under the same seed and data.

    Returns (alpha, holdout nDCG@10) rows in input order; a failed training
    yields NaN for its row and the sweep continues.
    """
    rows = []
    for alpha in alphas:
        row_cfg = dataclasses.replace(
            cfg, loss_cfg=dataclasses.replace(cfg.loss_cfg, alpha=alpha))
        try:
            report = train_student(data, row_cfg)
            ndcg = _holdout_ndcg10(report, data, row_cfg)
        except TrainingDiverged as exc:
            log.warning("alpha=%s training diverged: %s", alpha, exc)
            ndcg = float("nan")
        rows.append((float(alpha), ndcg))
    return rows


def write_alpha_csv(rows: Sequence[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "ndcg10"])
        for alpha, ndcg in rows:
            writer.writerow([f"{alpha:g}", f"{ndcg:.6f}"])
