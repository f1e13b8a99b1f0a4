"""Finite-difference audits for every differentiable stage.

Each suite returns (check name, report) pairs in one shared format so the
CLI and the test suite print and gate on the same data. Inputs are sampled
away from the few non-smooth points (hinges, ramps, top-k ties, absolute
values): central differences straddle a kink instead of measuring it.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport
from .data import LabelSpace, Sample, Split
from .errors import ConfigError
from .label_graph import GatParams, gat_forward
from .losses import BatchItem, LossConfig, distill_loss, rank_loss, spml_loss, total_loss
from .model import AdapterParams, ModelParams, forward_batch, init_model, named_parameters
from .reconstruction import SdaParams, VfrParams, svfr_forward

SUITE_NAMES = ("ops", "gmc", "svfr", "loss", "full")

SUITE_TOLERANCES = {
    "ops": 1e-6,
    "gmc": 1e-5,
    "svfr": 1e-5,
    "loss": 1e-6,
    "full": 1e-4,
}

STEP = 1e-6


def _sq(t: ad.Tensor) -> ad.Tensor:
    """Sum of squares: a smooth scalar whose gradient varies with the output."""
    return ad.reduce_sum(ad.mul(t, t))


def _signed(rng, shape, low=0.2, high=1.0) -> np.ndarray:
    """Magnitudes in [low, high] with random signs; keeps kinked ops off zero."""
    mag = rng.uniform(low, high, shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return np.asarray(mag * sign)


def _separated(rng, n: int) -> np.ndarray:
    """Values with pairwise gaps >= 0.5, shuffled; top-k selection stays stable."""
    base = np.arange(n) * 0.75 + rng.uniform(-0.1, 0.1, n)
    return np.asarray(rng.permutation(base))


# ---------------------------------------------------------------------------
# ops


def _ops_suite(seed: int) -> list[tuple[str, GradCheckReport]]:
    rng = np.random.default_rng(seed)
    tol = SUITE_TOLERANCES["ops"]
    checks: list[tuple[str, GradCheckReport]] = []

    def run(name, f, inputs):
        checks.append((name, ad.gradcheck(f, inputs, step=STEP, tol=tol)))

    run(
        "add-broadcast",
        lambda t: _sq(ad.add(t["a"], t["b"])),
        {"a": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, 4)},
    )
    run(
        "sub",
        lambda t: _sq(ad.sub(t["a"], t["b"])),
        {"a": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, (3, 4))},
    )
    run(
        "mul-broadcast",
        lambda t: _sq(ad.mul(t["a"], t["b"])),
        {"a": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, (3, 1))},
    )
    run("scale", lambda t: _sq(ad.scale(t["a"], -1.7)), {"a": rng.uniform(-1, 1, (2, 3))})
    run(
        "matmul",
        lambda t: _sq(ad.matmul(t["a"], t["b"])),
        {"a": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, (4, 2))},
    )
    run(
        "matmul-exact",
        lambda t: _sq(ad.matmul_exact(t["a"], t["b"])),
        {"a": rng.uniform(-1, 1, (3, 4)), "b": rng.uniform(-1, 1, (4, 2))},
    )
    run(
        "matvec",
        lambda t: _sq(ad.matvec(t["a"], t["x"])),
        {"a": rng.uniform(-1, 1, (3, 4)), "x": rng.uniform(-1, 1, 4)},
    )
    run(
        "vecmat",
        lambda t: _sq(ad.vecmat(t["x"], t["a"])),
        {"x": rng.uniform(-1, 1, 3), "a": rng.uniform(-1, 1, (3, 4))},
    )
    run(
        "dot",
        lambda t: ad.dot(t["a"], t["b"]),
        {"a": rng.uniform(-1, 1, 5), "b": rng.uniform(-1, 1, 5)},
    )
    run(
        "linear",
        lambda t: _sq(ad.linear(t["x"], t["w"], t["b"])),
        {
            "x": rng.uniform(-1, 1, (3, 5)),
            "w": rng.uniform(-1, 1, (5, 2)),
            "b": rng.uniform(-1, 1, 2),
        },
    )
    run(
        "transpose-reshape",
        lambda t: _sq(ad.reshape(ad.transpose(t["a"]), (2, 6))),
        {"a": rng.uniform(-1, 1, (3, 4))},
    )
    run(
        "concat",
        lambda t: _sq(ad.concat(t["a"], t["b"], axis=1)),
        {"a": rng.uniform(-1, 1, (3, 2)), "b": rng.uniform(-1, 1, (3, 4))},
    )
    run(
        "stack",
        lambda t: _sq(ad.stack([t["a"], t["b"], t["c"]])),
        {k: rng.uniform(-1, 1, 4) for k in ("a", "b", "c")},
    )
    run("take-row", lambda t: _sq(ad.take_row(t["a"], 1)), {"a": rng.uniform(-1, 1, (3, 4))})
    run(
        "gather-repeats",
        lambda t: _sq(ad.gather(t["v"], np.array([0, 2, 2, 4]))),
        {"v": rng.uniform(-1, 1, 5)},
    )
    run("reduce-sum-axis", lambda t: _sq(ad.reduce_sum(t["a"], axis=0)), {"a": rng.uniform(-1, 1, (3, 4))})
    run("reduce-mean", lambda t: _sq(ad.reduce_mean(t["a"], axis=1)), {"a": rng.uniform(-1, 1, (3, 4))})
    run("sum-exact", lambda t: _sq(ad.sum_exact(t["a"], axis=1)), {"a": rng.uniform(-1, 1, (3, 4))})
    run("tanh", lambda t: _sq(ad.tanh(t["a"])), {"a": rng.uniform(-2, 2, (3, 4))})
    run("sigmoid", lambda t: _sq(ad.sigmoid(t["a"])), {"a": rng.uniform(-2, 2, (3, 4))})
    run("elu", lambda t: _sq(ad.elu(t["a"])), {"a": _signed(rng, (3, 4))})
    run("relu", lambda t: _sq(ad.relu(t["a"])), {"a": _signed(rng, (3, 4))})
    run(
        "leaky-relu",
        lambda t: _sq(ad.leaky_relu(t["a"], 0.2)),
        {"a": _signed(rng, (3, 4))},
    )
    run("log", lambda t: _sq(ad.log(t["a"])), {"a": rng.uniform(0.2, 2.0, (3, 4))})
    run("absolute", lambda t: ad.reduce_sum(ad.absolute(t["a"])), {"a": _signed(rng, (3, 4))})
    run(
        "neg-binary-entropy",
        lambda t: ad.reduce_sum(ad.neg_binary_entropy(t["p"])),
        {"p": rng.uniform(0.1, 0.9, (2, 5))},
    )
    run("softmax-rows", lambda t: _sq(ad.softmax(t["a"], axis=-1)), {"a": rng.uniform(-2, 2, (3, 4))})
    run("softmax-cols", lambda t: _sq(ad.softmax(t["a"], axis=0)), {"a": rng.uniform(-2, 2, (3, 4))})
    run(
        "l1-normalize-rows",
        lambda t: _sq(ad.l1_normalize_rows(t["q"])),
        {"q": rng.uniform(0.2, 1.0, (3, 4))},
    )
    run(
        "cosine-sim",
        lambda t: ad.cosine_sim(t["a"], t["b"]),
        {"a": _signed(rng, 5), "b": _signed(rng, 5)},
    )
    run(
        "cosine-rows",
        lambda t: _sq(ad.cosine_rows(t["a"], t["b"])),
        {"a": _signed(rng, (3, 4)), "b": _signed(rng, (3, 4))},
    )
    run("topk-mean", lambda t: ad.topk_mean(t["v"], 3), {"v": _separated(rng, 6)})
    run(
        "topk-mean-rows",
        lambda t: _sq(ad.topk_mean_rows(t["m"], 2)),
        {"m": np.stack([_separated(rng, 5) for _ in range(3)])},
    )
    run(
        "add-outer",
        lambda t: _sq(ad.add_outer(t["u"], t["v"])),
        {"u": rng.uniform(-1, 1, 3), "v": rng.uniform(-1, 1, 4)},
    )
    run(
        "sub-outer",
        lambda t: _sq(ad.sub_outer(t["u"], t["v"])),
        {"u": rng.uniform(-1, 1, 3), "v": rng.uniform(-1, 1, 4)},
    )
    a0 = rng.uniform(-1, 1, (3, 4))
    run(
        "l1-distance",
        lambda t: ad.l1_distance(t["a"], t["b"]),
        {"a": a0, "b": a0 + _signed(rng, (3, 4), low=0.3)},
    )
    return checks


# ---------------------------------------------------------------------------
# label graph


def _gat_inputs(rng, c: int, d: int, latent: int, guard: float = 5e-2):
    """Draw node/weight/attn sets whose edge pre-activations clear the ramp."""
    while True:
        nodes = rng.uniform(-1.0, 1.0, (c, d))
        weight = rng.uniform(-0.7, 0.7, (d, latent))
        attn = rng.normal(0.0, 0.5, 2 * latent)
        mapped = nodes @ weight
        edges = np.add.outer(mapped @ attn[:latent], mapped @ attn[latent:])
        if np.abs(edges).min() > guard:
            return nodes, weight, attn


def _gmc_suite(seed: int) -> list[tuple[str, GradCheckReport]]:
    rng = np.random.default_rng(seed)
    tol = SUITE_TOLERANCES["gmc"]
    checks = []
    for activation in ("elu", "tanh"):
        nodes, weight, attn = _gat_inputs(rng, c=4, d=5, latent=3)

        def f(t, act=activation):
            params = GatParams(weight=t["weight"], attn=t["attn"], activation=act)
            return _sq(gat_forward(params, t["nodes"]))

        report = ad.gradcheck(
            f, {"nodes": nodes, "weight": weight, "attn": attn}, step=STEP, tol=tol
        )
        checks.append((f"gat-{activation}", report))
    return checks


# ---------------------------------------------------------------------------
# decoupling and reconstruction


def _svfr_leaves(rng, c: int, d: int, latent: int, p: int) -> dict[str, np.ndarray]:
    return {
        "patches": rng.uniform(-1.0, 1.0, (p, d)),
        "embeddings": _signed(rng, (c, d)),
        "enriched": rng.uniform(-1.0, 1.0, (c, latent)),
        "sda.feat_weight": rng.uniform(-0.7, 0.7, (d, d)),
        "sda.feat_bias": rng.uniform(-0.3, 0.3, d),
        "sda.attn_weight": rng.uniform(-0.7, 0.7, d),
        "sda.attn_bias": np.asarray(rng.uniform(-0.3, 0.3)),
        "vfr.fuse_weight": rng.uniform(-0.7, 0.7, (latent + d, d)),
        "vfr.fuse_bias": rng.uniform(-0.3, 0.3, d),
        "vfr.recon_weight": rng.uniform(-0.7, 0.7, d),
        "vfr.recon_bias": np.asarray(rng.uniform(-0.3, 0.3)),
    }


def _svfr_run(t: dict[str, ad.Tensor]):
    sda = SdaParams(
        feat_weight=t["sda.feat_weight"],
        feat_bias=t["sda.feat_bias"],
        attn_weight=t["sda.attn_weight"],
        attn_bias=t["sda.attn_bias"],
    )
    vfr = VfrParams(
        fuse_weight=t["vfr.fuse_weight"],
        fuse_bias=t["vfr.fuse_bias"],
        recon_weight=t["vfr.recon_weight"],
        recon_bias=t["vfr.recon_bias"],
    )
    return svfr_forward(sda, vfr, t["patches"], t["embeddings"], t["enriched"])


def _svfr_suite(seed: int) -> list[tuple[str, GradCheckReport]]:
    rng = np.random.default_rng(seed)
    tol = SUITE_TOLERANCES["svfr"]
    leaves = _svfr_leaves(rng, c=3, d=4, latent=3, p=5)
    decouple = ad.gradcheck(
        lambda t: _sq(_svfr_run(t).decoupled), leaves, step=STEP, tol=tol
    )
    reconstruct = ad.gradcheck(
        lambda t: ad.add(_sq(_svfr_run(t).reconstructed), _sq(_svfr_run(t).patch_mass)),
        leaves,
        step=STEP,
        tol=tol,
    )
    return [("svfr-decouple", decouple), ("svfr-reconstruct", reconstruct)]


# ---------------------------------------------------------------------------
# losses


def _loss_suite(seed: int) -> list[tuple[str, GradCheckReport]]:
    del seed  # fixed operating points; hinge and threshold clearance is by construction
    tol = SUITE_TOLERANCES["loss"]
    checks = []

    # one active hinge (margin 0.5), three inactive, all >= 0.4 from the kink
    rank_scores = np.array([0.6, 0.1, 1.9, 0.7, -0.8])
    rank_labels = np.array([1, -1, 1, 0, -1], dtype=np.int8)
    checks.append(
        (
            "rank",
            ad.gradcheck(
                lambda t: rank_loss(t["s"], rank_labels), {"s": rank_scores}, step=STEP, tol=tol
            ),
        )
    )
    checks.append(
        (
            "rank-assume-negative",
            ad.gradcheck(
                lambda t: rank_loss(t["s"], rank_labels, assume_negative=True),
                {"s": rank_scores},
                step=STEP,
                tol=tol,
            ),
        )
    )

    teacher = np.array([0.9, -0.4, 0.2, -0.7])
    embedding = np.array([0.1, 0.3, -0.5, 0.2])  # every coordinate 0.3+ from the teacher
    checks.append(
        (
            "distill",
            ad.gradcheck(
                lambda t: distill_loss(teacher, t["f"]), {"f": embedding}, step=STEP, tol=tol
            ),
        )
    )

    # |s| <= 2 keeps sigmoids in [0.12, 0.88], clear of the 0.95/0.05 gates
    spml_scores = np.array([1.3, -0.7, 0.4, -1.8, 0.9])
    spml_labels = np.array([1, 0, 0, 0, 0], dtype=np.int8)
    for mode in ("iun", "em", "em_apl"):
        cfg = LossConfig(mode=mode, alpha_em=0.2)
        checks.append(
            (
                f"spml-{mode.replace('_', '-')}",
                ad.gradcheck(
                    lambda t, c=cfg: spml_loss(t["s"], spml_labels, c, apl_active=True),
                    {"s": spml_scores},
                    step=STEP,
                    tol=tol,
                ),
            )
        )

    batch_labels = (rank_labels, np.array([-1, 1, 0, 1, -1], dtype=np.int8))
    batch_scores = (rank_scores, np.array([-0.3, 1.6, 0.2, 1.1, 0.4]))
    teachers = (teacher, np.array([-0.2, 0.6, -0.9, 0.3]))
    embeddings = (embedding, np.array([0.4, -0.1, 0.2, -0.6]))

    def batch(t):
        items = [
            BatchItem(
                scores=t[f"s{i}"],
                class_embedding=t[f"f{i}"],
                labels=batch_labels[i],
                teacher=teachers[i],
            )
            for i in range(2)
        ]
        return total_loss(items, LossConfig())

    inputs = {}
    for i in range(2):
        inputs[f"s{i}"] = batch_scores[i]
        inputs[f"f{i}"] = embeddings[i]
    checks.append(("total-batch", ad.gradcheck(batch, inputs, step=STEP, tol=tol)))
    return checks


# ---------------------------------------------------------------------------
# full pipeline


def _full_suite(seed: int) -> list[tuple[str, GradCheckReport]]:
    rng = np.random.default_rng(seed)
    c, d, raw, p = 3, 4, 5, 2
    space = LabelSpace(
        names=tuple(f"l{i}" for i in range(c)),
        embeddings=rng.uniform(-1.0, 1.0, (c, d)),
        seen_mask=np.ones(c, dtype=bool),
    )
    samples = []
    for i in range(2):
        labels = np.array([1, -1, 1], dtype=np.int8) if i == 0 else np.array([-1, 1, -1], dtype=np.int8)
        positives = space.embeddings[labels == 1]
        teacher = positives.mean(axis=0)
        teacher = teacher / np.linalg.norm(teacher)
        samples.append(
            Sample(
                image_id=f"g{i}",
                raw_class=rng.uniform(-1.0, 1.0, raw),
                raw_patch=rng.uniform(-1.0, 1.0, (p, raw)),
                teacher_class=teacher,
                labels=labels,
                split=Split.TRAIN,
            )
        )
    base = init_model(space, raw_dim=raw, seed=seed, k=2, trainable_embeddings=True)

    def rebuild(t: dict[str, ad.Tensor]) -> ModelParams:
        return ModelParams(
            embeddings=t["embeddings"],
            adapter=AdapterParams(
                cls_weight=t["adapter.cls_weight"],
                cls_bias=t["adapter.cls_bias"],
                patch_weight=t["adapter.patch_weight"],
                patch_bias=t["adapter.patch_bias"],
            ),
            gat=GatParams(
                weight=t["gat.weight"],
                attn=t["gat.attn"],
                slope=base.gat.slope,
                activation=base.gat.activation,
            ),
            sda=SdaParams(
                feat_weight=t["sda.feat_weight"],
                feat_bias=t["sda.feat_bias"],
                attn_weight=t["sda.attn_weight"],
                attn_bias=t["sda.attn_bias"],
            ),
            vfr=VfrParams(
                fuse_weight=t["vfr.fuse_weight"],
                fuse_bias=t["vfr.fuse_bias"],
                recon_weight=t["vfr.recon_weight"],
                recon_bias=t["vfr.recon_bias"],
            ),
            k=base.k,
            score_uses_enriched=base.score_uses_enriched,
        )

    def f(t):
        params = rebuild(t)
        results = forward_batch(params, samples)
        items = [
            BatchItem(
                scores=r.scores,
                class_embedding=r.class_embedding,
                labels=s.labels,
                teacher=s.teacher_class,
            )
            for r, s in zip(results, samples)
        ]
        return total_loss(items, LossConfig())

    inputs = {name: tensor.data for name, tensor in named_parameters(base)}
    report = ad.gradcheck(f, inputs, step=STEP, tol=SUITE_TOLERANCES["full"])
    return [("pipeline-batch2", report)]


# ---------------------------------------------------------------------------
# entry points


_SUITES = {
    "ops": _ops_suite,
    "gmc": _gmc_suite,
    "svfr": _svfr_suite,
    "loss": _loss_suite,
    "full": _full_suite,
}


def run_suite(name: str, seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    if name not in _SUITES:
        raise ConfigError(f"gradcheck suite must be one of {SUITE_NAMES}, got {name!r}")
    return _SUITES[name](seed)


def run_suites(names=SUITE_NAMES, seed: int = 0) -> list[tuple[str, str, GradCheckReport]]:
    """Flatten several suites into (suite, check, report) rows."""
    rows = []
    for name in names:
        for check, report in run_suite(name, seed):
            rows.append((name, check, report))
    return rows
