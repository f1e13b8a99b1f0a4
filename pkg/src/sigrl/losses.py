"""Per-class scoring and the training loss family.

The score couples each label embedding to the adapted global feature and to
the reconstructed patches through top-k mean pooling. Fully labeled training
uses a pairwise margin loss plus an L1 pull toward the teacher embedding;
single-positive training swaps the margin term for one of three losses over
the lone observed positive (assumed-negative, entropy-maximizing, or
entropy-maximizing with asymmetric pseudo-labels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

LOSS_MODES = ("ranking_distill", "iun", "em", "em_apl")
SPML_MODES = ("iun", "em", "em_apl")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "ranking_distill"
    alpha_em: float = 0.2
    theta_pos: float = 0.95
    theta_neg: float = 0.05
    temperature: float = 1.0
    assume_negative: bool = False
    mean_reduction: bool = False

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if self.alpha_em < 0:
            raise ConfigError(f"alpha_em must be >= 0, got {self.alpha_em}")
        if not 0.0 <= self.theta_neg <= self.theta_pos <= 1.0:
            raise ConfigError(
                f"need 0 <= theta_neg <= theta_pos <= 1, got ({self.theta_neg}, {self.theta_pos})"
            )
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


def score(
    label_embeddings: ad.Tensor,
    class_embedding: ad.Tensor,
    reconstructed: ad.Tensor,
    k: int,
) -> ad.Tensor:
    """Per-class score: global dot product plus top-k mean patch similarity."""
    if label_embeddings.ndim != 2:
        raise ad.ShapeError(f"label embeddings must be a matrix, got {label_embeddings.shape}")
    if class_embedding.shape != (label_embeddings.shape[1],):
        raise ad.ShapeError(
            f"class embedding {class_embedding.shape} does not match labels {label_embeddings.shape}"
        )
    if reconstructed.ndim != 2 or reconstructed.shape[1] != label_embeddings.shape[1]:
        raise ad.ShapeError(
            f"reconstructed patches {reconstructed.shape} do not match labels {label_embeddings.shape}"
        )
    if not 1 <= k <= reconstructed.shape[0]:
        raise ConfigError(f"top-k width {k} invalid for {reconstructed.shape[0]} patches")
    # exact inner products: per-label values must not depend on buffer layout
    d = label_embeddings.shape[1]
    global_term = ad.reshape(
        ad.matmul_exact(label_embeddings, ad.reshape(class_embedding, (d, 1))),
        (label_embeddings.shape[0],),
    )
    patch_sims = ad.matmul_exact(label_embeddings, ad.transpose(reconstructed))
    return ad.add(global_term, ad.topk_mean_rows(patch_sims, k))


def rank_loss(scores: ad.Tensor, labels: np.ndarray, assume_negative: bool = False) -> ad.Tensor:
    """Sum of max(1 + s_neg - s_pos, 0) over every positive/negative pair.

    Negatives are the explicitly annotated -1 entries; with assume_negative,
    unannotated 0 entries join them. Returns 0 when either side is empty.
    """
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ad.ShapeError(f"scores {scores.shape} and labels {labels.shape} must align")
    pos = np.nonzero(labels == 1)[0]
    neg = np.nonzero((labels == -1) | (assume_negative & (labels == 0)))[0]
    if pos.size == 0 or neg.size == 0:
        return ad.constant(0.0)
    margins = ad.relu(ad.sub_outer(ad.gather(scores, neg), ad.gather(scores, pos)) + 1.0)
    return ad.reduce_sum(margins)


def distill_loss(teacher: np.ndarray, class_embedding: ad.Tensor) -> ad.Tensor:
    """L1 distance between the frozen teacher vector and the adapted feature."""
    return ad.l1_distance(ad.constant(teacher), class_embedding)


def _spml_split(labels: np.ndarray) -> tuple[int, np.ndarray]:
    labels = np.asarray(labels)
    pos = np.nonzero(labels == 1)[0]
    if pos.size != 1 or set(np.unique(labels)) - {0, 1}:
        raise DataError(
            "single-positive losses need exactly one +1 label and 0 elsewhere; "
            "apply the single-positive mask first"
        )
    return int(pos[0]), np.nonzero(labels == 0)[0]


def spml_loss(
    scores: ad.Tensor, labels: np.ndarray, config: LossConfig, apl_active: bool = True
) -> ad.Tensor:
    """One of the single-positive losses, selected by ``config.mode``.

    iun:    -log p_pos - (1/(C-1)) * sum log(1 - p_u) over unobserved u.
    em:     -log p_pos + alpha_em * sum_u [p_u log p_u + (1-p_u) log(1-p_u)].
    em_apl: em, except unobserved entries with p >= theta_pos re-enter as
            positive log terms and p <= theta_neg as negative log terms
            (only once ``apl_active`` is set, i.e. after the warmup epoch).

    Probabilities are sigmoid(score / temperature); the pseudo-label
    selection is made on values and carries no gradient of its own.
    """
    if config.mode not in SPML_MODES:
        raise ConfigError(f"spml_loss needs a single-positive mode, got {config.mode!r}")
    pos, unobserved = _spml_split(labels)
    probs = ad.sigmoid(ad.scale(scores, 1.0 / config.temperature))
    loss = ad.scale(ad.reduce_sum(ad.log(ad.gather(probs, [pos]))), -1.0)
    if unobserved.size == 0:
        return loss
    p_un = ad.gather(probs, unobserved)
    if config.mode == "iun":
        assumed = ad.reduce_sum(ad.log(ad.sub(ad.constant(1.0), p_un)))
        return ad.add(loss, ad.scale(assumed, -1.0 / (labels.shape[0] - 1)))
    if config.mode == "em_apl" and apl_active:
        values = p_un.data
        promote = unobserved[values >= config.theta_pos]
        demote = unobserved[values <= config.theta_neg]
        rest = unobserved[(values < config.theta_pos) & (values > config.theta_neg)]
        if promote.size:
            loss = ad.add(loss, ad.scale(ad.reduce_sum(ad.log(ad.gather(probs, promote))), -1.0))
        if demote.size:
            down = ad.log(ad.sub(ad.constant(1.0), ad.gather(probs, demote)))
            loss = ad.add(loss, ad.scale(ad.reduce_sum(down), -1.0))
        if rest.size:
            entropy = ad.reduce_sum(ad.neg_binary_entropy(ad.gather(probs, rest)))
            loss = ad.add(loss, ad.scale(entropy, config.alpha_em))
        return loss
    entropy = ad.reduce_sum(ad.neg_binary_entropy(p_un))
    return ad.add(loss, ad.scale(entropy, config.alpha_em))


@dataclass
class BatchItem:
    """One sample's forward products that the loss needs."""

    scores: ad.Tensor
    class_embedding: ad.Tensor
    labels: np.ndarray
    teacher: np.ndarray


def total_loss(items: list[BatchItem], config: LossConfig, apl_active: bool = True) -> ad.Tensor:
    """Batch objective: margin or single-positive term plus distillation.

    Plain summation over the batch; ``mean_reduction`` divides by the batch
    size instead.
    """
    if not items:
        raise ConfigError("total_loss needs a non-empty batch")
    total: ad.Tensor | None = None
    for item in items:
        if config.mode == "ranking_distill":
            term = rank_loss(item.scores, item.labels, config.assume_negative)
        else:
            term = spml_loss(item.scores, item.labels, config, apl_active)
        term = ad.add(term, distill_loss(item.teacher, item.class_embedding))
        total = term if total is None else ad.add(total, term)
    if config.mean_reduction:
        total = ad.scale(total, 1.0 / len(items))
    return total
