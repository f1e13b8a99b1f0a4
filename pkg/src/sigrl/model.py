"""Full model assembly and checkpoint serialization.

The adapter stands in for an image backbone: two linear maps taking raw
class/patch features (D_raw) into the label-embedding space (D). Everything
downstream (label graph, decoupling, reconstruction, scoring) runs in that
shared space.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import LabelSpace, Sample, _Reader
from .errors import BadMagicError, ConfigError, DimensionError, VersionError
from .label_graph import GAT_ACTIVATIONS, GatParams, gat_forward
from .losses import score
from .reconstruction import SdaParams, SvfrOutput, VfrParams, svfr_forward

CHECKPOINT_MAGIC = b"SIGP"
CHECKPOINT_VERSION = 1

ATTN_INIT_SIGMA = 0.01


@dataclass
class AdapterParams:
    """Linear maps from raw feature space (D_raw) to embedding space (D)."""

    cls_weight: ad.Tensor  # (D_raw, D)
    cls_bias: ad.Tensor  # (D,)
    patch_weight: ad.Tensor  # (D_raw, D)
    patch_bias: ad.Tensor  # (D,)

    def __post_init__(self):
        if self.cls_weight.ndim != 2 or self.patch_weight.ndim != 2:
            raise ConfigError("adapter weights must be matrices")
        if self.patch_weight.shape != self.cls_weight.shape:
            raise ConfigError(
                f"adapter weights disagree: {self.cls_weight.shape} vs {self.patch_weight.shape}"
            )
        d = self.cls_weight.shape[1]
        if self.cls_bias.shape != (d,) or self.patch_bias.shape != (d,):
            raise ConfigError("adapter bias width must match weight output width")

    @property
    def raw_dim(self) -> int:
        return int(self.cls_weight.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.cls_weight.shape[1])


@dataclass
class ModelParams:
    embeddings: ad.Tensor  # (C, D); trainable only when explicitly requested
    adapter: AdapterParams
    gat: GatParams
    sda: SdaParams
    vfr: VfrParams
    k: int
    score_uses_enriched: bool = False

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ConfigError("label embeddings must be a (C, D) matrix")
        d = self.embeddings.shape[1]
        if self.adapter.out_dim != d:
            raise ConfigError(f"adapter output width {self.adapter.out_dim}, embeddings want {d}")
        if self.gat.weight.shape[0] != d:
            raise ConfigError(f"gat input width {self.gat.weight.shape[0]}, embeddings want {d}")
        if self.sda.feat_weight.shape[0] != d:
            raise ConfigError("sda width does not match embedding width")
        if self.vfr.fuse_weight.shape != (d + self.gat.latent_dim, d):
            raise ConfigError(
                f"vfr fuse weight must be ({d + self.gat.latent_dim}, {d}),"
                f" got {self.vfr.fuse_weight.shape}"
            )
        if self.score_uses_enriched and self.gat.latent_dim != d:
            raise ConfigError("scoring on enriched embeddings needs latent width == D")
        if self.k < 1:
            raise ConfigError(f"top-k pool size must be >= 1, got {self.k}")

    @property
    def num_labels(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.embeddings.shape[1])


# ---------------------------------------------------------------------------
# initialization


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    limit = math.sqrt(1.0 / fan_in)
    return np.asarray(rng.uniform(-limit, limit, shape))


def init_model(
    label_space: LabelSpace,
    raw_dim: int,
    seed: int,
    k: int = 16,
    latent_dim: int | None = None,
    activation: str = "elu",
    slope: float = ad.DEFAULT_LEAKY_SLOPE,
    trainable_embeddings: bool = False,
    score_uses_enriched: bool = False,
) -> ModelParams:
    """Build fresh parameters; the draw order below is part of the determinism
    contract, do not reorder."""
    if raw_dim < 1:
        raise ConfigError(f"raw feature dim must be >= 1, got {raw_dim}")
    d = label_space.embed_dim
    latent = d if latent_dim is None else int(latent_dim)
    if latent < 1:
        raise ConfigError(f"latent width must be >= 1, got {latent}")
    rng = np.random.default_rng(seed)

    adapter = AdapterParams(
        cls_weight=ad.parameter(_uniform(rng, raw_dim, (raw_dim, d))),
        cls_bias=ad.parameter(_uniform(rng, raw_dim, (d,))),
        patch_weight=ad.parameter(_uniform(rng, raw_dim, (raw_dim, d))),
        patch_bias=ad.parameter(_uniform(rng, raw_dim, (d,))),
    )
    gat = GatParams(
        weight=ad.parameter(_uniform(rng, d, (d, latent))),
        attn=ad.parameter(np.asarray(rng.normal(0.0, ATTN_INIT_SIGMA, 2 * latent))),
        slope=slope,
        activation=activation,
    )
    sda = SdaParams(
        feat_weight=ad.parameter(_uniform(rng, d, (d, d))),
        feat_bias=ad.parameter(_uniform(rng, d, (d,))),
        attn_weight=ad.parameter(_uniform(rng, d, (d,))),
        attn_bias=ad.parameter(_uniform(rng, d, ())),
    )
    vfr = VfrParams(
        fuse_weight=ad.parameter(_uniform(rng, d + latent, (d + latent, d))),
        fuse_bias=ad.parameter(_uniform(rng, d + latent, (d,))),
        recon_weight=ad.parameter(_uniform(rng, d, (d,))),
        recon_bias=ad.parameter(_uniform(rng, d, ())),
    )
    embeddings = ad.Tensor(
        np.array(label_space.embeddings, dtype=np.float64),
        requires_grad=trainable_embeddings,
    )
    return ModelParams(
        embeddings=embeddings,
        adapter=adapter,
        gat=gat,
        sda=sda,
        vfr=vfr,
        k=k,
        score_uses_enriched=score_uses_enriched,
    )


# ---------------------------------------------------------------------------
# parameter traversal


def named_parameters(params: ModelParams) -> list[tuple[str, ad.Tensor]]:
    """Fixed traversal order; checkpoints and optimizer state rely on it."""
    return [
        ("embeddings", params.embeddings),
        ("adapter.cls_weight", params.adapter.cls_weight),
        ("adapter.cls_bias", params.adapter.cls_bias),
        ("adapter.patch_weight", params.adapter.patch_weight),
        ("adapter.patch_bias", params.adapter.patch_bias),
        ("gat.weight", params.gat.weight),
        ("gat.attn", params.gat.attn),
        ("sda.feat_weight", params.sda.feat_weight),
        ("sda.feat_bias", params.sda.feat_bias),
        ("sda.attn_weight", params.sda.attn_weight),
        ("sda.attn_bias", params.sda.attn_bias),
        ("vfr.fuse_weight", params.vfr.fuse_weight),
        ("vfr.fuse_bias", params.vfr.fuse_bias),
        ("vfr.recon_weight", params.vfr.recon_weight),
        ("vfr.recon_bias", params.vfr.recon_bias),
    ]


def trainable_parameters(params: ModelParams) -> list[tuple[str, ad.Tensor]]:
    return [(n, t) for n, t in named_parameters(params) if t.requires_grad]


def zero_grad(params: ModelParams) -> None:
    for _, t in named_parameters(params):
        t.grad = None


def parameter_state(params: ModelParams) -> dict[str, np.ndarray]:
    return {n: t.data.copy() for n, t in named_parameters(params)}


def load_parameter_state(params: ModelParams, state: dict[str, np.ndarray]) -> None:
    for name, t in named_parameters(params):
        if name not in state:
            raise ConfigError(f"parameter state is missing block {name!r}")
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != t.shape:
            raise ConfigError(
                f"parameter {name!r}: state shape {value.shape} does not match {t.shape}"
            )
        t.data = value.copy()


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class ForwardResult:
    scores: ad.Tensor  # (C,)
    class_embedding: ad.Tensor  # (D,), distillation target's counterpart
    patch_features: ad.Tensor  # (P, D)
    svfr: SvfrOutput


def enrich_embeddings(params: ModelParams) -> ad.Tensor:
    """Label-graph pass; shared across a batch since the graph never varies."""
    return gat_forward(params.gat, params.embeddings)


def forward_sample(
    params: ModelParams, sample: Sample, enriched: ad.Tensor | None = None
) -> ForwardResult:
    if sample.raw_class.shape[0] != params.adapter.raw_dim:
        raise ConfigError(
            f"sample {sample.image_id}: raw dim {sample.raw_class.shape[0]},"
            f" adapter wants {params.adapter.raw_dim}"
        )
    if enriched is None:
        enriched = enrich_embeddings(params)
    f_class = ad.linear(
        ad.constant(sample.raw_class), params.adapter.cls_weight, params.adapter.cls_bias
    )
    f_patch = ad.linear(
        ad.constant(sample.raw_patch), params.adapter.patch_weight, params.adapter.patch_bias
    )
    svfr = svfr_forward(params.sda, params.vfr, f_patch, params.embeddings, enriched)
    basis = enriched if params.score_uses_enriched else params.embeddings
    scores = score(basis, f_class, svfr.reconstructed, params.k)
    return ForwardResult(
        scores=scores, class_embedding=f_class, patch_features=f_patch, svfr=svfr
    )


def forward_batch(
    params: ModelParams, samples, enriched: ad.Tensor | None = None
) -> list[ForwardResult]:
    if enriched is None:
        enriched = enrich_embeddings(params)
    return [forward_sample(params, s, enriched) for s in samples]


# ---------------------------------------------------------------------------
# checkpoints


_ACTIVATION_TAGS = {name: i for i, name in enumerate(GAT_ACTIVATIONS)}


def save_model(params: ModelParams, path) -> None:
    blocks = named_parameters(params)
    flags = 0
    if params.score_uses_enriched:
        flags |= 1
    if params.embeddings.requires_grad:
        flags |= 2
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", CHECKPOINT_VERSION, params.k)
    out += struct.pack("<BB", flags, _ACTIVATION_TAGS[params.gat.activation])
    out += struct.pack("<d", params.gat.slope)
    out += struct.pack("<I", len(blocks))
    for name, tensor in blocks:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", tensor.ndim)
        out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        out += np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


_EXPECTED_RANKS = {
    "embeddings": 2,
    "adapter.cls_weight": 2,
    "adapter.cls_bias": 1,
    "adapter.patch_weight": 2,
    "adapter.patch_bias": 1,
    "gat.weight": 2,
    "gat.attn": 1,
    "sda.feat_weight": 2,
    "sda.feat_bias": 1,
    "sda.attn_weight": 1,
    "sda.attn_bias": 0,
    "vfr.fuse_weight": 2,
    "vfr.fuse_bias": 1,
    "vfr.recon_weight": 1,
    "vfr.recon_bias": 0,
}


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"expected magic {CHECKPOINT_MAGIC!r}, found {magic!r}", 0)
    at = r.pos
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", at)
    k = r.u32()
    flags_at = r.pos
    flags, act_tag = struct.unpack("<BB", r.take(2))
    if flags & ~3:
        raise DimensionError(f"unknown flag bits {flags:#x}", flags_at)
    if act_tag >= len(GAT_ACTIVATIONS):
        raise DimensionError(f"unknown activation tag {act_tag}", flags_at + 1)
    slope = struct.unpack("<d", r.take(8))[0]
    n_blocks = r.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        name_at = r.pos
        name = r.text()
        ndim_at = r.pos
        ndim = r.u32()
        if ndim > 2:
            raise DimensionError(f"block {name!r}: rank {ndim} exceeds 2", ndim_at)
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = 1
        for dim in dims:
            count *= dim
        arrays[name] = r.f64(count).reshape(dims)
        if name not in _EXPECTED_RANKS:
            raise DimensionError(f"unknown parameter block {name!r}", name_at)
        if ndim != _EXPECTED_RANKS[name]:
            raise DimensionError(
                f"block {name!r}: rank {ndim}, expected {_EXPECTED_RANKS[name]}", ndim_at
            )
    if r.pos != len(blob):
        raise DimensionError(
            f"{len(blob) - r.pos} trailing bytes after the last declared block", r.pos
        )
    missing = sorted(set(_EXPECTED_RANKS) - set(arrays))
    if missing:
        raise DimensionError(f"checkpoint is missing parameter block {missing[0]!r}", len(blob))

    def p(name: str) -> ad.Tensor:
        return ad.parameter(arrays[name])

    try:
        return ModelParams(
            embeddings=ad.Tensor(arrays["embeddings"], requires_grad=bool(flags & 2)),
            adapter=AdapterParams(
                cls_weight=p("adapter.cls_weight"),
                cls_bias=p("adapter.cls_bias"),
                patch_weight=p("adapter.patch_weight"),
                patch_bias=p("adapter.patch_bias"),
            ),
            gat=GatParams(
                weight=p("gat.weight"),
                attn=p("gat.attn"),
                slope=slope,
                activation=GAT_ACTIVATIONS[act_tag],
            ),
            sda=SdaParams(
                feat_weight=p("sda.feat_weight"),
                feat_bias=p("sda.feat_bias"),
                attn_weight=p("sda.attn_weight"),
                attn_bias=p("sda.attn_bias"),
            ),
            vfr=VfrParams(
                fuse_weight=p("vfr.fuse_weight"),
                fuse_bias=p("vfr.fuse_bias"),
                recon_weight=p("vfr.recon_weight"),
                recon_bias=p("vfr.recon_bias"),
            ),
            k=k,
            score_uses_enriched=bool(flags & 1),
        )
    except ConfigError as exc:
        raise DimensionError(f"checkpoint blocks are mutually inconsistent: {exc}", 0) from None
