"""Multi-label recognition on precomputed embeddings, desk scale.

The package wires a label-graph attention layer, semantic decoupling
attention, and visual feature reconstruction into a scoring pipeline with
ranking/distillation and single-positive losses, plus a training and
evaluation harness with its own binary dataset and checkpoint formats.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, gradcheck  # noqa: F401
