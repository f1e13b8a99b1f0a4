"""Semantic decoupling attention and visual feature reconstruction.

The decoupling half builds one patch-attention distribution per category and
mixes patches into per-category visual features; categories then exchange
information through a cosine attention map. The reconstruction half fuses
graph-enriched label embeddings with the decoupled features, re-attends over
patches per category, and reweights each patch by its total attention mass.

Category-axis reductions (attention-map row normalization, the decoupling
product, and the per-patch attention mass) are exactly rounded, so category
relabeling permutes every output bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .errors import ConfigError


@dataclass
class SdaParams:
    """Patch-attention head: feature map (D, D) and scoring vector (D,)."""

    feat_weight: ad.Tensor
    feat_bias: ad.Tensor
    attn_weight: ad.Tensor
    attn_bias: ad.Tensor

    def __post_init__(self):
        d = self.feat_weight.shape[0]
        if self.feat_weight.shape != (d, d):
            raise ConfigError(f"sda feature weight must be square, got {self.feat_weight.shape}")
        if self.feat_bias.shape != (d,) or self.attn_weight.shape != (d,):
            raise ConfigError("sda parameter shapes do not agree")
        if self.attn_bias.ndim != 0:
            raise ConfigError("sda attention bias must be a scalar")


@dataclass
class VfrParams:
    """Fusion map (D_latent + D, D) and reconstruction scoring vector (D,)."""

    fuse_weight: ad.Tensor
    fuse_bias: ad.Tensor
    recon_weight: ad.Tensor
    recon_bias: ad.Tensor

    def __post_init__(self):
        if self.fuse_weight.ndim != 2:
            raise ConfigError(f"vfr fuse weight must be a matrix, got {self.fuse_weight.shape}")
        d = self.fuse_weight.shape[1]
        if self.fuse_bias.shape != (d,) or self.recon_weight.shape != (d,):
            raise ConfigError("vfr parameter shapes do not agree")
        if self.recon_bias.ndim != 0:
            raise ConfigError("vfr reconstruction bias must be a scalar")


@dataclass
class SvfrOutput:
    category_features: ad.Tensor  # M, (C, D)
    patch_attention: ad.Tensor  # A, (C, P) rows sum to 1
    attention_map: ad.Tensor  # Q, (C, C) entries in [0, 1]
    decoupled: ad.Tensor  # T, (C, D)
    fused: ad.Tensor  # O, (C, D)
    reconstructed: ad.Tensor  # M_hat, (P, D)
    recon_attention: ad.Tensor  # A_hat, (C, P) rows sum to 1
    patch_mass: ad.Tensor  # w, (P,) sums to C


def sda_category_features(
    params: SdaParams, patch_features: ad.Tensor, label_embeddings: ad.Tensor
) -> tuple[ad.Tensor, ad.Tensor]:
    """Per-category patch attention A (C, P) and mixed features M (C, D)."""
    if patch_features.ndim != 2 or label_embeddings.ndim != 2:
        raise ad.ShapeError("sda needs patch and label feature matrices")
    if patch_features.shape[1] != label_embeddings.shape[1]:
        raise ad.ShapeError(
            f"patch dim {patch_features.shape} does not match labels {label_embeddings.shape}"
        )
    mixtures, attentions = [], []
    for i in range(label_embeddings.shape[0]):
        h = ad.take_row(label_embeddings, i)
        gated = ad.tanh(ad.mul(patch_features, h))
        feats = ad.linear(gated, params.feat_weight, params.feat_bias)
        logits = ad.add(ad.matvec(ad.tanh(feats), params.attn_weight), params.attn_bias)
        attn = ad.softmax(logits, axis=0)
        attentions.append(attn)
        mixtures.append(ad.vecmat(attn, patch_features))
    return ad.stack(mixtures), ad.stack(attentions)


def sda_attention_map(category_features: ad.Tensor, label_embeddings: ad.Tensor) -> ad.Tensor:
    """Q[i][j]: rectified cosine between visual feature i and label embedding j."""
    return ad.relu(ad.cosine_rows(category_features, label_embeddings))


def sda_decouple(attention_map: ad.Tensor, category_features: ad.Tensor) -> ad.Tensor:
    """Row-normalize the map and mix category features through it."""
    if attention_map.shape[1] != category_features.shape[0]:
        raise ad.ShapeError(
            f"attention map {attention_map.shape} does not match features {category_features.shape}"
        )
    return ad.matmul_exact(ad.l1_normalize_rows(attention_map), category_features)


def vfr_fuse(params: VfrParams, enriched: ad.Tensor, decoupled: ad.Tensor) -> ad.Tensor:
    """Concatenate graph-enriched and decoupled rows, then map back to D."""
    if enriched.shape[0] != decoupled.shape[0]:
        raise ad.ShapeError(
            f"enriched {enriched.shape} and decoupled {decoupled.shape} row counts differ"
        )
    joined = ad.concat(enriched, decoupled, axis=1)
    if joined.shape[1] != params.fuse_weight.shape[0]:
        raise ad.ShapeError(
            f"fused width {joined.shape[1]} does not match fuse weight {params.fuse_weight.shape}"
        )
    return ad.linear(joined, params.fuse_weight, params.fuse_bias)


def vfr_reconstruct(
    params: VfrParams, patch_features: ad.Tensor, fused: ad.Tensor
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Reweight patches by their total attention mass across categories.

    Returns (M_hat, A_hat, w): the reweighted patches (P, D), the per-category
    patch attention (C, P), and the per-patch mass (P,) whose sum is C.
    """
    if patch_features.shape[1] != fused.shape[1]:
        raise ad.ShapeError(
            f"patch dim {patch_features.shape} does not match fused {fused.shape}"
        )
    rows = []
    for i in range(fused.shape[0]):
        gated = ad.tanh(ad.mul(patch_features, ad.take_row(fused, i)))
        logits = ad.add(ad.matvec(gated, params.recon_weight), params.recon_bias)
        rows.append(ad.softmax(logits, axis=0))
    attn = ad.stack(rows)
    mass = ad.sum_exact(attn, axis=0)
    patches = ad.mul(patch_features, ad.reshape(mass, (patch_features.shape[0], 1)))
    return patches, attn, mass


def svfr_forward(
    sda: SdaParams,
    vfr: VfrParams,
    patch_features: ad.Tensor,
    label_embeddings: ad.Tensor,
    enriched: ad.Tensor,
) -> SvfrOutput:
    """Full decouple-then-reconstruct pass for one sample."""
    category_features, patch_attention = sda_category_features(
        sda, patch_features, label_embeddings
    )
    attention_map = sda_attention_map(category_features, label_embeddings)
    decoupled = sda_decouple(attention_map, category_features)
    fused = vfr_fuse(vfr, enriched, decoupled)
    reconstructed, recon_attention, patch_mass = vfr_reconstruct(vfr, patch_features, fused)
    return SvfrOutput(
        category_features=category_features,
        patch_attention=patch_attention,
        attention_map=attention_map,
        decoupled=decoupled,
        fused=fused,
        reconstructed=reconstructed,
        recon_attention=recon_attention,
        patch_mass=patch_mass,
    )
