"""Multi-label ranking metrics and the ZSL/GZSL evaluation protocols."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, LabelSpace, Split
from .errors import ConfigError, DataError
from .model import ModelParams, enrich_embeddings, forward_sample

EVAL_PROTOCOLS = ("zsl", "gzsl")


@dataclass(frozen=True)
class PredictionSet:
    scores: np.ndarray  # (N, C_eval)
    truth: np.ndarray  # (N, C_eval) in {0, 1}
    label_names: tuple[str, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        truth = np.asarray(self.truth, dtype=np.int64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "truth", truth)
        if scores.ndim != 2 or scores.shape != truth.shape:
            raise DataError(f"scores {scores.shape} and truth {truth.shape} must agree")
        if scores.shape[1] != len(self.label_names):
            raise DataError("one label name per column is required")
        if not np.isfinite(scores).all():
            raise DataError("scores must be finite")
        if not np.isin(truth, (0, 1)).all():
            raise DataError("truth must be binary")


@dataclass(frozen=True)
class TopkStats:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    map: float
    per_class_ap: tuple[tuple[str, float], ...]
    skipped_classes: tuple[str, ...]
    topk: dict[int, TopkStats] = field(default_factory=dict)

    def flat(self) -> dict[str, float]:
        out = {"map": self.map}
        for k in sorted(self.topk):
            stats = self.topk[k]
            out[f"top{k}_precision"] = stats.precision
            out[f"top{k}_recall"] = stats.recall
            out[f"top{k}_f1"] = stats.f1
        for name, ap in self.per_class_ap:
            out[f"ap_{name}"] = ap
        return out


def _ranked_indices(scores: np.ndarray) -> np.ndarray:
    # stable sort of the negated scores: descending value, ascending index on ties
    return np.argsort(-scores, kind="stable")


def average_precision(scores, truth) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.ndim != 1 or scores.shape != truth.shape:
        raise DataError(f"scores {scores.shape} and truth {truth.shape} must be equal vectors")
    positives = int(truth.sum())
    if positives == 0:
        raise DataError("average precision needs at least one positive")
    order = _ranked_indices(scores)
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if truth[idx] == 1:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / positives


def map_score(pred: PredictionSet) -> tuple[float, tuple[tuple[str, float], ...], tuple[str, ...]]:
    """Macro mean AP over columns with at least one positive.

    Returns (mAP, per-class APs for evaluable columns, skipped column names).
    """
    per_class = []
    skipped = []
    for j, name in enumerate(pred.label_names):
        if pred.truth[:, j].sum() == 0:
            skipped.append(name)
            continue
        per_class.append((name, average_precision(pred.scores[:, j], pred.truth[:, j])))
    if not per_class:
        raise DataError("no evaluable label columns: every class lacks positives")
    value = math.fsum(ap for _, ap in per_class) / len(per_class)
    return value, tuple(per_class), tuple(skipped)


def topk_prf(pred: PredictionSet, k: int) -> TopkStats:
    n, c = pred.scores.shape
    if not 1 <= k <= c:
        raise ConfigError(f"top-k size must lie in [1, {c}], got {k}")
    hits = 0
    for i in range(n):
        top = _ranked_indices(pred.scores[i])[:k]
        hits += int(pred.truth[i, top].sum())
    total_pos = int(pred.truth.sum())
    precision = hits / (k * n)
    recall = hits / total_pos if total_pos else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return TopkStats(precision=precision, recall=recall, f1=f1)


def score_matrix(params: ModelParams, samples) -> np.ndarray:
    """Forward every sample and stack the raw score vectors."""
    enriched = enrich_embeddings(params)
    return np.stack([forward_sample(params, s, enriched).scores.data for s in samples])


def prediction_set(
    scores: np.ndarray, samples, label_space: LabelSpace, columns: np.ndarray
) -> PredictionSet:
    truth = np.stack([(s.labels == 1).astype(np.int64) for s in samples])
    names = tuple(label_space.names[j] for j in columns)
    return PredictionSet(scores=scores[:, columns], truth=truth[:, columns], label_names=names)


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    protocol: str = "gzsl",
    ks=(3, 5),
    split: Split = Split.TEST,
) -> MetricsReport:
    if protocol not in EVAL_PROTOCOLS:
        raise ConfigError(f"protocol must be one of {EVAL_PROTOCOLS}, got {protocol!r}")
    samples = dataset.split_samples(split)
    if not samples:
        raise DataError(f"no samples in the {split.name.lower()} split")
    if params.num_labels != dataset.num_labels or params.embed_dim != dataset.embed_dim:
        raise ConfigError(
            f"model is ({params.num_labels}, {params.embed_dim}) but dataset wants"
            f" ({dataset.num_labels}, {dataset.embed_dim})"
        )
    if protocol == "zsl":
        columns = np.nonzero(~dataset.label_space.seen_mask)[0]
        if columns.size == 0:
            raise ConfigError("zsl protocol needs at least one unseen label")
    else:
        columns = np.arange(dataset.num_labels)
    scores = score_matrix(params, samples)
    pred = prediction_set(scores, samples, dataset.label_space, columns)
    value, per_class, skipped = map_score(pred)
    # a requested k wider than the evaluated label set is silently dropped
    topk = {int(k): topk_prf(pred, int(k)) for k in ks if 1 <= int(k) <= columns.size}
    return MetricsReport(map=value, per_class_ap=per_class, skipped_classes=skipped, topk=topk)
