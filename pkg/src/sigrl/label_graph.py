"""Single-head graph attention over the fully connected label graph.

Every label attends to every label (self-loops included). Edge scores come
from a shared linear map and an attention vector over the concatenated pair;
coefficients are a row softmax of the scores; each output row is the
coefficient-weighted mixture of mapped neighbors pushed through the output
nonlinearity.

Row sums and the aggregation use exactly rounded summation, so relabeling
the graph permutes every intermediate and the output bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

GAT_ACTIVATIONS = ("elu", "tanh")


@dataclass
class GatParams:
    """weight: (D, D_latent); attn: (2*D_latent,)."""

    weight: ad.Tensor
    attn: ad.Tensor
    slope: float = ad.DEFAULT_LEAKY_SLOPE
    activation: str = "elu"

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ConfigError(f"gat weight must be a matrix, got shape {self.weight.shape}")
        latent = self.weight.shape[1]
        if self.attn.shape != (2 * latent,):
            raise ConfigError(
                f"gat attention vector must have shape ({2 * latent},), got {self.attn.shape}"
            )
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"leaky slope must lie in (0, 1), got {self.slope}")
        if self.activation not in GAT_ACTIVATIONS:
            raise ConfigError(f"gat activation must be one of {GAT_ACTIVATIONS}")

    @property
    def latent_dim(self) -> int:
        return int(self.weight.shape[1])


def _pair_scores(params: GatParams, mapped: ad.Tensor) -> ad.Tensor:
    # attn . concat(W h_i, W h_j) splits into a source and a target half
    latent = params.latent_dim
    src = ad.matvec(mapped, ad.gather(params.attn, np.arange(latent)))
    dst = ad.matvec(mapped, ad.gather(params.attn, np.arange(latent, 2 * latent)))
    return ad.leaky_relu(ad.add_outer(src, dst), params.slope)


def edge_scores(params: GatParams, node_features: ad.Tensor) -> ad.Tensor:
    """(C, C) matrix of pre-softmax attention scores, self-pairs included."""
    if node_features.ndim != 2 or node_features.shape[1] != params.weight.shape[0]:
        raise ad.ShapeError(
            f"node features {node_features.shape} do not match gat weight {params.weight.shape}"
        )
    return _pair_scores(params, ad.matmul(node_features, params.weight))


def attention_coefficients(scores: ad.Tensor) -> ad.Tensor:
    """Row softmax of edge scores; each row is a distribution over neighbors."""
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ad.ShapeError(f"edge scores must be square, got shape {scores.shape}")
    return ad.softmax(scores, axis=1)


def gat_forward(params: GatParams, node_features: ad.Tensor) -> ad.Tensor:
    """Enriched node features, shape (C, D_latent)."""
    if node_features.ndim != 2 or node_features.shape[1] != params.weight.shape[0]:
        raise ad.ShapeError(
            f"node features {node_features.shape} do not match gat weight {params.weight.shape}"
        )
    mapped = ad.matmul(node_features, params.weight)
    coeff = attention_coefficients(_pair_scores(params, mapped))
    mixed = ad.matmul_exact(coeff, mapped)
    return ad.elu(mixed) if params.activation == "elu" else ad.tanh(mixed)
