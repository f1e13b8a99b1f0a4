"""Dataset model, binary container format, and synthetic data generation.

Container layout, version 1, all integers little-endian:

    magic 'SIGF' | version u32 | C P D D_raw N (u32 each)
    | C label names, each u32 length + UTF-8 bytes
    | seen mask, C bytes of 0/1
    | label embeddings, C*D float64
    | N sample records

    record: u32 length + UTF-8 id | raw_class D_raw f64 | raw_patch P*D_raw f64
            | teacher_class D f64 | labels C int8 in {-1, 0, 1} | split u8

Readers raise a distinct error per defect class, each naming the byte offset
where the defect was detected.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DimensionError,
    LabelValueError,
    TruncatedError,
    VersionError,
)

DATASET_MAGIC = b"SIGF"
DATASET_VERSION = 1


class Split(enum.IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2


def _frozen(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LabelSpace:
    """The label vocabulary with one embedding row per label."""

    names: tuple[str, ...]
    embeddings: np.ndarray  # (C, D)
    seen_mask: np.ndarray  # (C,) bool

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        emb = _frozen(self.embeddings)
        mask = _frozen(self.seen_mask, dtype=bool)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "seen_mask", mask)
        if len(names) < 2:
            raise DataError(f"label space needs at least 2 labels, got {len(names)}")
        if len(set(names)) != len(names) or any(not n for n in names):
            raise DataError("label names must be unique and non-empty")
        if emb.ndim != 2 or emb.shape[0] != len(names):
            raise DataError(f"embeddings shape {emb.shape} does not match {len(names)} labels")
        if mask.shape != (len(names),):
            raise DataError(f"seen mask shape {mask.shape} does not match {len(names)} labels")
        if not np.isfinite(emb).all():
            raise DataError("label embeddings must be finite")

    @property
    def num_labels(self) -> int:
        return len(self.names)

    @property
    def embed_dim(self) -> int:
        return int(self.embeddings.shape[1])


@dataclass(frozen=True)
class Sample:
    image_id: str
    raw_class: np.ndarray  # (D_raw,)
    raw_patch: np.ndarray  # (P, D_raw)
    teacher_class: np.ndarray  # (D,)
    labels: np.ndarray  # (C,) int8, values in {-1, 0, 1}
    split: Split

    def __post_init__(self):
        object.__setattr__(self, "raw_class", _frozen(self.raw_class))
        object.__setattr__(self, "raw_patch", _frozen(self.raw_patch))
        object.__setattr__(self, "teacher_class", _frozen(self.teacher_class))
        object.__setattr__(self, "labels", _frozen(self.labels, dtype=np.int8))
        object.__setattr__(self, "split", Split(self.split))
        if not self.image_id:
            raise DataError("sample id must be non-empty")
        if self.raw_class.ndim != 1 or self.teacher_class.ndim != 1 or self.labels.ndim != 1:
            raise DataError(f"sample {self.image_id}: vector field has wrong rank")
        if self.raw_patch.ndim != 2 or self.raw_patch.shape[0] < 1:
            raise DataError(f"sample {self.image_id}: needs at least one patch row")
        if self.raw_patch.shape[1] != self.raw_class.shape[0]:
            raise DataError(f"sample {self.image_id}: patch dim differs from class dim")
        if not set(np.unique(self.labels)).issubset({-1, 0, 1}):
            raise DataError(f"sample {self.image_id}: labels must lie in {{-1, 0, 1}}")
        for field in (self.raw_class, self.raw_patch, self.teacher_class):
            if not np.isfinite(field).all():
                raise DataError(f"sample {self.image_id}: non-finite feature values")


@dataclass(frozen=True)
class Dataset:
    label_space: LabelSpace
    samples: tuple[Sample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        c = self.label_space.num_labels
        d = self.label_space.embed_dim
        for s in self.samples:
            if s.labels.shape[0] != c:
                raise DataError(f"sample {s.image_id}: {s.labels.shape[0]} labels, expected {c}")
            if s.teacher_class.shape[0] != d:
                raise DataError(f"sample {s.image_id}: teacher dim {s.teacher_class.shape[0]}, expected {d}")
            if s.raw_patch.shape != self.samples[0].raw_patch.shape:
                raise DataError(f"sample {s.image_id}: patch shape drifts across dataset")

    @property
    def num_labels(self) -> int:
        return self.label_space.num_labels

    @property
    def num_patches(self) -> int:
        return int(self.samples[0].raw_patch.shape[0]) if self.samples else 0

    @property
    def raw_dim(self) -> int:
        return int(self.samples[0].raw_class.shape[0]) if self.samples else 0

    @property
    def embed_dim(self) -> int:
        return self.label_space.embed_dim

    def split_samples(self, split: Split) -> tuple[Sample, ...]:
        return tuple(s for s in self.samples if s.split == split)

    @property
    def train(self) -> tuple[Sample, ...]:
        return self.split_samples(Split.TRAIN)

    @property
    def val(self) -> tuple[Sample, ...]:
        return self.split_samples(Split.VAL)

    @property
    def test(self) -> tuple[Sample, ...]:
        return self.split_samples(Split.TEST)


# ---------------------------------------------------------------------------
# serialization


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedError(
                f"needed {n} bytes, only {len(self.blob) - self.pos} remain", self.pos
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        at = self.pos
        length = self.u32()
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise LabelValueError("string field is not valid UTF-8", at) from None

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()


def write_dataset(dataset: Dataset, path) -> None:
    """Serialize to the container format; round-trips bit-exactly."""
    c = dataset.num_labels
    p = dataset.num_patches
    d = dataset.embed_dim
    d_raw = dataset.raw_dim
    out = bytearray()
    out += DATASET_MAGIC
    out += struct.pack("<IIIIII", DATASET_VERSION, c, p, d, d_raw, len(dataset.samples))
    for name in dataset.label_space.names:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    out += bytes(int(b) for b in dataset.label_space.seen_mask)
    out += np.ascontiguousarray(dataset.label_space.embeddings, dtype="<f8").tobytes()
    for s in dataset.samples:
        raw = s.image_id.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += np.ascontiguousarray(s.raw_class, dtype="<f8").tobytes()
        out += np.ascontiguousarray(s.raw_patch, dtype="<f8").tobytes()
        out += np.ascontiguousarray(s.teacher_class, dtype="<f8").tobytes()
        out += np.ascontiguousarray(s.labels, dtype="<i1").tobytes()
        out += struct.pack("<B", int(s.split))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4)
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"expected magic {DATASET_MAGIC!r}, found {magic!r}", 0)
    at = r.pos
    version = r.u32()
    if version != DATASET_VERSION:
        raise VersionError(f"unsupported container version {version}", at)
    dims_at = r.pos
    c, p, d, d_raw, n = (r.u32() for _ in range(5))
    for i, (label, value, floor) in enumerate(
        [("C", c, 2), ("P", p, 1), ("D", d, 1), ("D_raw", d_raw, 1), ("N", n, 0)]
    ):
        if value < floor:
            raise DimensionError(f"header field {label}={value} is below {floor}", dims_at + 4 * i)
    names = tuple(r.text() for _ in range(c))
    mask_at = r.pos
    mask_bytes = r.take(c)
    if any(b not in (0, 1) for b in mask_bytes):
        bad = next(i for i, b in enumerate(mask_bytes) if b not in (0, 1))
        raise LabelValueError(f"seen-mask byte must be 0 or 1, found {mask_bytes[bad]}", mask_at + bad)
    embeddings = r.f64(c * d).reshape(c, d)
    samples = []
    for _ in range(n):
        image_id = r.text()
        raw_class = r.f64(d_raw)
        raw_patch = r.f64(p * d_raw).reshape(p, d_raw)
        teacher = r.f64(d)
        labels_at = r.pos
        labels = np.frombuffer(r.take(c), dtype="<i1").copy()
        bad = np.nonzero(~np.isin(labels, (-1, 0, 1)))[0]
        if bad.size:
            raise LabelValueError(
                f"label value {int(labels[bad[0]])} outside {{-1, 0, 1}}", labels_at + int(bad[0])
            )
        tag_at = r.pos
        tag = r.take(1)[0]
        if tag not in (0, 1, 2):
            raise LabelValueError(f"split tag must be 0, 1, or 2, found {tag}", tag_at)
        samples.append(
            Sample(
                image_id=image_id,
                raw_class=raw_class,
                raw_patch=raw_patch,
                teacher_class=teacher,
                labels=labels,
                split=Split(tag),
            )
        )
    if r.pos != len(blob):
        raise DimensionError(
            f"{len(blob) - r.pos} trailing bytes after the last declared record", r.pos
        )
    space = LabelSpace(
        names=names,
        embeddings=embeddings,
        seen_mask=np.frombuffer(mask_bytes, dtype=np.uint8).astype(bool),
    )
    return Dataset(label_space=space, samples=tuple(samples))


# ---------------------------------------------------------------------------
# label-supervision transforms


def apply_spml_mask(dataset: Dataset, seed: int) -> Dataset:
    """Keep one uniformly chosen positive per training sample, zero the rest.

    Validation and test splits pass through untouched. A second application
    with any seed is a no-op, because a single positive is its own choice.
    """
    rng = np.random.default_rng(seed)
    masked = []
    for s in dataset.samples:
        if s.split != Split.TRAIN:
            masked.append(s)
            continue
        positives = np.nonzero(s.labels == 1)[0]
        if positives.size == 0:
            raise DataError(f"sample {s.image_id} has no positive label to keep")
        keep = positives[int(rng.integers(0, positives.size))]
        labels = np.zeros_like(s.labels)
        labels[keep] = 1
        masked.append(replace(s, labels=labels))
    return Dataset(label_space=dataset.label_space, samples=tuple(masked))


@dataclass(frozen=True)
class ZslSplit:
    """Training samples scrubbed of unseen-label supervision, plus the id sets."""

    train: tuple[Sample, ...]
    seen_ids: tuple[int, ...]
    unseen_ids: tuple[int, ...]
    label_space: LabelSpace  # seen_mask updated to reflect the split


def split_zsl(dataset: Dataset, unseen_ids, policy: str = "mask_annotations") -> ZslSplit:
    """Hide unseen-label supervision from the training split.

    ``mask_annotations`` zeroes the unseen columns of every training sample;
    ``drop_images`` additionally removes training samples that carried an
    unseen positive. Unseen columns are zeroed under both policies, so no
    unseen supervision (positive or negative) can leak into training.
    """
    c = dataset.num_labels
    unseen = tuple(sorted({int(i) for i in unseen_ids}))
    if not unseen:
        raise ConfigError("ZSL split needs at least one unseen label id")
    if any(i < 0 or i >= c for i in unseen):
        raise ConfigError(f"unseen label ids must lie in [0, {c}), got {unseen}")
    if len(unseen) == c:
        raise ConfigError("cannot hold out every label; nothing would remain to train on")
    if policy not in ("mask_annotations", "drop_images"):
        raise ConfigError(f"unknown unseen-label policy {policy!r}")
    unseen_arr = np.array(unseen)
    train = []
    for s in dataset.split_samples(Split.TRAIN):
        if policy == "drop_images" and np.any(s.labels[unseen_arr] == 1):
            continue
        labels = np.array(s.labels, copy=True)
        labels[unseen_arr] = 0
        train.append(replace(s, labels=labels))
    seen = tuple(i for i in range(c) if i not in unseen)
    mask = np.ones(c, dtype=bool)
    mask[unseen_arr] = False
    space = LabelSpace(
        names=dataset.label_space.names,
        embeddings=dataset.label_space.embeddings,
        seen_mask=mask,
    )
    return ZslSplit(train=tuple(train), seen_ids=seen, unseen_ids=unseen, label_space=space)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_maps(classes: int, dim: int, raw_dim: int, seed: int):
    """The generator's label embeddings and fixed projection for a seed.

    Embeddings are orthonormalized Gaussian rows when classes <= dim (unit
    norm, pairwise orthogonal), plain normalized Gaussians otherwise. The
    projection dim -> raw_dim has orthonormal rows when dim <= raw_dim, so
    its transpose inverts it exactly on the embedded subspace.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, classes))
    if classes <= dim:
        q, r = np.linalg.qr(g)
        embeddings = (q * np.sign(np.diag(r))).T
    else:
        embeddings = rng.standard_normal((classes, dim))
        embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
    g2 = rng.standard_normal((raw_dim, dim))
    if dim <= raw_dim:
        q2, r2 = np.linalg.qr(g2)
        projection = (q2 * np.sign(np.diag(r2))).T
    else:
        projection = rng.standard_normal((dim, raw_dim)) / math.sqrt(dim)
    return embeddings, projection, rng


def gen_synthetic(
    classes: int = 8,
    patches: int = 16,
    dim: int = 32,
    raw_dim: int = 512,
    samples: int = 256,
    noise_sigma: float = 0.0,
    labels_min: int = 2,
    labels_max: int = 3,
    seed: int = 0,
    unseen_ids=(),
    split_fractions=(0.7, 0.15, 0.15),
) -> Dataset:
    """Plant label embeddings into random patch subsets and add noise.

    Each sample draws between labels_min and labels_max distinct positive
    labels; each positive plants its projected embedding into a random
    non-empty patch subset (plants add up when subsets overlap). The teacher
    vector is the normalized mean of the positive embeddings, and raw_class
    is that same vector pushed through the projection, so a linear adapter
    can recover it exactly at zero noise.

    The wide raw_dim default matches the width a pretrained encoder would
    emit and, more importantly, shrinks the adapter's initialization scale so
    the recovery map is reachable within a short optimization budget.
    """
    if classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    for label, value in (("patches", patches), ("dim", dim), ("raw_dim", raw_dim), ("samples", samples)):
        if value < 1:
            raise ConfigError(f"{label} must be >= 1, got {value}")
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if not 1 <= labels_min <= labels_max <= classes:
        raise ConfigError(
            f"need 1 <= labels_min <= labels_max <= classes, got ({labels_min}, {labels_max})"
        )
    fractions = tuple(float(f) for f in split_fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be 3 nonnegative values summing to 1, got {fractions}")
    unseen = tuple(sorted({int(i) for i in unseen_ids}))
    if any(i < 0 or i >= classes for i in unseen):
        raise ConfigError(f"unseen label ids must lie in [0, {classes}), got {unseen}")

    embeddings, projection, rng = synthetic_maps(classes, dim, raw_dim, seed)
    n_train = int(fractions[0] * samples)
    n_val = int(fractions[1] * samples)
    id_width = max(4, len(str(samples - 1)))
    out = []
    for i in range(samples):
        n_pos = int(rng.integers(labels_min, labels_max + 1))
        pos = rng.choice(classes, size=n_pos, replace=False)
        patch = np.zeros((patches, raw_dim))
        per_label_cap = max(1, patches // n_pos)
        for label in pos:
            count = int(rng.integers(1, per_label_cap + 1))
            rows = rng.choice(patches, size=count, replace=False)
            patch[rows] += embeddings[label] @ projection
        if noise_sigma > 0:
            patch += noise_sigma * rng.standard_normal((patches, raw_dim))
        mean_pos = embeddings[pos].mean(axis=0)
        teacher = mean_pos / max(float(np.linalg.norm(mean_pos)), 1e-12)
        raw_class = teacher @ projection
        if noise_sigma > 0:
            raw_class = raw_class + noise_sigma * rng.standard_normal(raw_dim)
        labels = np.full(classes, -1, dtype=np.int8)
        labels[pos] = 1
        split = Split.TRAIN if i < n_train else Split.VAL if i < n_train + n_val else Split.TEST
        out.append(
            Sample(
                image_id=f"synth-{i:0{id_width}d}",
                raw_class=raw_class,
                raw_patch=patch,
                teacher_class=teacher,
                labels=labels,
                split=split,
            )
        )
    mask = np.ones(classes, dtype=bool)
    if unseen:
        mask[np.array(unseen)] = False
    names = tuple(f"label_{i:02d}" for i in range(classes))
    space = LabelSpace(names=names, embeddings=embeddings, seen_mask=mask)
    return Dataset(label_space=space, samples=tuple(out))
