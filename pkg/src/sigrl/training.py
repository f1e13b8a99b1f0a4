"""Epoch loop: shuffled mini-batches, AdamW, cosine schedule, best-val tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Split
from .errors import ConfigError, DataError, TrainingDivergedError
from .label_graph import GAT_ACTIVATIONS
from .losses import BatchItem, LossConfig, total_loss
from .metrics import EVAL_PROTOCOLS, evaluate, map_score, prediction_set
from .model import (
    ModelParams,
    enrich_embeddings,
    forward_sample,
    init_model,
    load_parameter_state,
    parameter_state,
    save_model,
    trainable_parameters,
    zero_grad,
)
from .optim import AdamW, lr_schedule


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 16
    k: int = 16
    latent_dim: int | None = None
    lr: float = 1e-4
    min_lr: float = 1e-7
    weight_decay: float = 0.05
    loss: LossConfig = field(default_factory=LossConfig)
    warmup_epochs: int = 1  # epochs before pseudo-label promotion kicks in
    activation: str = "elu"
    trainable_embeddings: bool = False
    score_uses_enriched: bool = False
    val_protocol: str = "gzsl"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be >= 1")
        if self.k < 1:
            raise ConfigError(f"top-k pool size must be >= 1, got {self.k}")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError(f"latent width must be >= 1, got {self.latent_dim}")
        if not 0.0 < self.min_lr <= self.lr:
            raise ConfigError(f"need 0 < min_lr <= lr, got lr={self.lr} min_lr={self.min_lr}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup epochs must be >= 0, got {self.warmup_epochs}")
        if self.activation not in GAT_ACTIVATIONS:
            raise ConfigError(f"activation must be one of {GAT_ACTIVATIONS}")
        if self.val_protocol not in EVAL_PROTOCOLS:
            raise ConfigError(f"val protocol must be one of {EVAL_PROTOCOLS}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 1-based
    train_loss: float  # mean per-sample loss over the epoch
    batch_losses: tuple[float, ...]
    val_map: float | None
    lr: float  # rate used by the epoch's final step


@dataclass
class TrainReport:
    history: list[EpochRecord]
    best_epoch: int
    best_val_map: float | None
    best_state: dict[str, np.ndarray]
    params: ModelParams  # final-step weights, not the best snapshot


def fit(dataset: Dataset, config: TrainConfig, checkpoint_path=None, log_fn=None) -> TrainReport:
    """Train on the train split, track the best validation mAP snapshot.

    Deterministic given (dataset bytes, config): shuffling, init, and every
    reduction run in a fixed order.
    """
    train = dataset.train
    if not train:
        raise DataError("training needs a non-empty train split")
    params = init_model(
        dataset.label_space,
        raw_dim=dataset.raw_dim,
        seed=config.seed,
        k=config.k,
        latent_dim=config.latent_dim,
        activation=config.activation,
        trainable_embeddings=config.trainable_embeddings,
        score_uses_enriched=config.score_uses_enriched,
    )
    optimizer = AdamW(trainable_parameters(params), weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    n_batches = math.ceil(len(train) / config.batch_size)
    total_steps = config.epochs * n_batches
    has_val = bool(dataset.val)

    history: list[EpochRecord] = []
    best_epoch = 0
    best_val = None
    best_state: dict[str, np.ndarray] = {}
    global_step = 0
    for epoch in range(1, config.epochs + 1):
        apl_active = epoch > config.warmup_epochs
        order = shuffle_rng.permutation(len(train))
        batch_losses = []
        lr = config.lr
        for start in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            zero_grad(params)
            enriched = enrich_embeddings(params)
            items = []
            for sample in batch:
                result = forward_sample(params, sample, enriched)
                items.append(
                    BatchItem(
                        scores=result.scores,
                        class_embedding=result.class_embedding,
                        labels=sample.labels,
                        teacher=sample.teacher_class,
                    )
                )
            loss = total_loss(items, config.loss, apl_active=apl_active)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size + 1}"
                )
            loss.backward()
            lr = lr_schedule(global_step, total_steps, config.lr, config.min_lr)
            optimizer.step(lr)
            global_step += 1
            batch_losses.append(value)
        val_map = None
        if has_val:
            val_map = evaluate(
                params, dataset, protocol=config.val_protocol, ks=(), split=Split.VAL
            ).map
            if best_val is None or val_map > best_val:
                best_val = val_map
                best_epoch = epoch
                best_state = parameter_state(params)
        record = EpochRecord(
            epoch=epoch,
            train_loss=math.fsum(batch_losses) / len(train),
            batch_losses=tuple(batch_losses),
            val_map=val_map,
            lr=lr,
        )
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    if not best_state:  # no validation split to rank epochs by
        best_epoch = config.epochs
        best_val = None
        best_state = parameter_state(params)
    if checkpoint_path is not None:
        final_state = parameter_state(params)
        load_parameter_state(params, best_state)
        save_model(params, checkpoint_path)
        load_parameter_state(params, final_state)
    return TrainReport(
        history=history,
        best_epoch=best_epoch,
        best_val_map=best_val,
        best_state=best_state,
        params=params,
    )


def random_baseline_map(
    dataset: Dataset,
    seed: int,
    trials: int = 50,
    protocol: str = "gzsl",
    split: Split | None = Split.TEST,
) -> float:
    """Mean mAP of uniform random scores under a protocol; ``split=None`` scores
    every sample, which shrinks the small-sample upward bias of random-ranking
    AP (the baseline needs no training, so no split must be held out)."""
    if protocol not in EVAL_PROTOCOLS:
        raise ConfigError(f"protocol must be one of {EVAL_PROTOCOLS}, got {protocol!r}")
    samples = dataset.samples if split is None else dataset.split_samples(split)
    if not samples:
        raise DataError("no samples to score")
    rng = np.random.default_rng(seed)
    if protocol == "zsl":
        columns = np.nonzero(~dataset.label_space.seen_mask)[0]
        if columns.size == 0:
            raise ConfigError("zsl baseline needs at least one unseen label")
    else:
        columns = np.arange(dataset.num_labels)
    values = []
    for _ in range(trials):
        scores = rng.uniform(0.0, 1.0, (len(samples), dataset.num_labels))
        pred = prediction_set(scores, samples, dataset.label_space, columns)
        values.append(map_score(pred)[0])
    return math.fsum(values) / trials
