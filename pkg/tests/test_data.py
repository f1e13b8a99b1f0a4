import numpy as np
import pytest

from sigrl import data as sd
from sigrl import errors as err


def tiny_dataset():
    emb = np.array([[1.0, 0.0], [0.0, 1.0]])
    space = sd.LabelSpace(names=("a", "b"), embeddings=emb, seen_mask=np.array([True, True]))
    sample = sd.Sample(
        image_id="x",
        raw_class=np.array([0.5, -0.5]),
        raw_patch=np.array([[1.5, 2.5]]),
        teacher_class=np.array([1.0, 0.0]),
        labels=np.array([1, -1], dtype=np.int8),
        split=sd.Split.TRAIN,
    )
    return sd.Dataset(label_space=space, samples=(sample,))


# ---------------------------------------------------------------------------
# model validation


def test_label_space_rejects_duplicate_names():
    with pytest.raises(err.DataError):
        sd.LabelSpace(names=("a", "a"), embeddings=np.eye(2), seen_mask=np.ones(2, bool))


def test_label_space_rejects_single_label():
    with pytest.raises(err.DataError):
        sd.LabelSpace(names=("a",), embeddings=np.eye(1), seen_mask=np.ones(1, bool))


def test_sample_rejects_bad_label_values():
    with pytest.raises(err.DataError):
        sd.Sample(
            image_id="x",
            raw_class=np.zeros(2),
            raw_patch=np.zeros((1, 2)),
            teacher_class=np.zeros(2),
            labels=np.array([2, 0], dtype=np.int8),
            split=sd.Split.TRAIN,
        )


def test_dataset_rejects_label_width_drift():
    ds = tiny_dataset()
    bad = sd.Sample(
        image_id="y",
        raw_class=np.zeros(2),
        raw_patch=np.zeros((1, 2)),
        teacher_class=np.zeros(2),
        labels=np.array([1, 0, 0], dtype=np.int8),
        split=sd.Split.TRAIN,
    )
    with pytest.raises(err.DataError):
        sd.Dataset(label_space=ds.label_space, samples=(ds.samples[0], bad))


def test_stored_arrays_are_read_only():
    ds = tiny_dataset()
    with pytest.raises(ValueError):
        ds.samples[0].raw_class[0] = 9.0


# ---------------------------------------------------------------------------
# container round trip and corruption


def test_round_trip_is_bit_exact(tmp_path):
    ds = sd.gen_synthetic(classes=4, patches=3, dim=5, raw_dim=6, samples=10, seed=3,
                          labels_min=1, labels_max=2, noise_sigma=0.2)
    path = tmp_path / "ds.sigf"
    sd.write_dataset(ds, path)
    back = sd.read_dataset(path)
    assert back.label_space.names == ds.label_space.names
    assert np.array_equal(back.label_space.embeddings, ds.label_space.embeddings)
    assert np.array_equal(back.label_space.seen_mask, ds.label_space.seen_mask)
    for a, b in zip(back.samples, ds.samples):
        assert a.image_id == b.image_id and a.split == b.split
        assert np.array_equal(a.raw_class, b.raw_class)
        assert np.array_equal(a.raw_patch, b.raw_patch)
        assert np.array_equal(a.teacher_class, b.teacher_class)
        assert np.array_equal(a.labels, b.labels)
    second = tmp_path / "ds2.sigf"
    sd.write_dataset(back, second)
    assert path.read_bytes() == second.read_bytes()


def corrupt(tmp_path, mutate, name="bad.sigf"):
    path = tmp_path / name
    sd.write_dataset(tiny_dataset(), path)
    blob = bytearray(path.read_bytes())
    mutate(blob)
    path.write_bytes(bytes(blob))
    return path


def test_bad_magic_detected(tmp_path):
    path = corrupt(tmp_path, lambda b: b.__setitem__(slice(0, 4), b"NOPE"))
    with pytest.raises(err.BadMagicError) as info:
        sd.read_dataset(path)
    assert info.value.offset == 0


def test_version_mismatch_detected(tmp_path):
    path = corrupt(tmp_path, lambda b: b.__setitem__(slice(4, 8), (99).to_bytes(4, "little")))
    with pytest.raises(err.VersionError) as info:
        sd.read_dataset(path)
    assert info.value.offset == 4


def test_truncated_payload_detected(tmp_path):
    path = tmp_path / "short.sigf"
    sd.write_dataset(tiny_dataset(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(err.TruncatedError) as info:
        sd.read_dataset(path)
    assert info.value.offset <= len(blob) - 10


def test_record_count_mismatch_detected(tmp_path):
    # header says 0 records but one record follows -> trailing bytes
    path = corrupt(tmp_path, lambda b: b.__setitem__(slice(24, 28), (0).to_bytes(4, "little")))
    with pytest.raises(err.DimensionError):
        sd.read_dataset(path)


def test_header_dimension_floor_detected(tmp_path):
    path = corrupt(tmp_path, lambda b: b.__setitem__(slice(8, 12), (1).to_bytes(4, "little")))
    with pytest.raises(err.DimensionError) as info:
        sd.read_dataset(path)
    assert info.value.offset == 8


def test_label_out_of_range_detected(tmp_path):
    def mutate(blob):
        # last record: labels sit just before the final split byte
        blob[len(blob) - 1 - 2] = 5

    path = corrupt(tmp_path, mutate)
    with pytest.raises(err.LabelValueError) as info:
        sd.read_dataset(path)
    assert info.value.offset == 125  # 28B header + names + mask + embeddings + record prefix


def test_split_tag_out_of_range_detected(tmp_path):
    path = corrupt(tmp_path, lambda b: b.__setitem__(len(b) - 1, 7))
    with pytest.raises(err.LabelValueError):
        sd.read_dataset(path)


# ---------------------------------------------------------------------------
# SPML masking


def test_spml_keeps_exactly_one_positive_in_train():
    ds = sd.gen_synthetic(classes=6, patches=4, dim=8, raw_dim=10, samples=60, seed=1)
    masked = sd.apply_spml_mask(ds, seed=5)
    for s in masked.samples:
        if s.split == sd.Split.TRAIN:
            assert int(np.sum(s.labels == 1)) == 1
            assert set(np.unique(s.labels)).issubset({0, 1})
        else:
            original = next(o for o in ds.samples if o.image_id == s.image_id)
            assert np.array_equal(s.labels, original.labels)


def test_spml_kept_positive_was_a_real_positive():
    ds = sd.gen_synthetic(classes=6, patches=4, dim=8, raw_dim=10, samples=40, seed=2)
    masked = sd.apply_spml_mask(ds, seed=9)
    for s, o in zip(masked.samples, ds.samples):
        if s.split == sd.Split.TRAIN:
            kept = int(np.nonzero(s.labels == 1)[0][0])
            assert o.labels[kept] == 1


def test_spml_deterministic_and_idempotent():
    ds = sd.gen_synthetic(classes=6, patches=4, dim=8, raw_dim=10, samples=50, seed=3)
    a = sd.apply_spml_mask(ds, seed=7)
    b = sd.apply_spml_mask(ds, seed=7)
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.labels, y.labels)
    again = sd.apply_spml_mask(a, seed=123)  # different seed, already masked
    for x, y in zip(again.samples, a.samples):
        assert np.array_equal(x.labels, y.labels)


def test_spml_rejects_sample_without_positive():
    base = tiny_dataset()
    no_pos = sd.Sample(
        image_id="n",
        raw_class=np.zeros(2),
        raw_patch=np.zeros((1, 2)),
        teacher_class=np.zeros(2),
        labels=np.array([-1, 0], dtype=np.int8),
        split=sd.Split.TRAIN,
    )
    ds = sd.Dataset(label_space=base.label_space, samples=(no_pos,))
    with pytest.raises(err.DataError, match="n"):
        sd.apply_spml_mask(ds, seed=0)


# ---------------------------------------------------------------------------
# ZSL splitting


def test_split_zsl_masks_all_unseen_supervision():
    ds = sd.gen_synthetic(classes=8, patches=4, dim=8, raw_dim=10, samples=80, seed=4)
    split = sd.split_zsl(ds, unseen_ids=(6, 7))
    assert split.unseen_ids == (6, 7)
    assert len(split.train) == len(ds.train)
    for s in split.train:
        assert np.all(s.labels[[6, 7]] == 0)
    assert not split.label_space.seen_mask[6] and split.label_space.seen_mask[0]


def test_split_zsl_drop_policy_removes_unseen_positives():
    ds = sd.gen_synthetic(classes=8, patches=4, dim=8, raw_dim=10, samples=80, seed=5)
    split = sd.split_zsl(ds, unseen_ids=(0,), policy="drop_images")
    originals = {s.image_id: s for s in ds.train}
    kept_ids = {s.image_id for s in split.train}
    for image_id, original in originals.items():
        if original.labels[0] == 1:
            assert image_id not in kept_ids
    for s in split.train:
        assert s.labels[0] == 0


def test_split_zsl_rejects_degenerate_requests():
    ds = sd.gen_synthetic(classes=4, patches=2, dim=4, raw_dim=5, samples=12, seed=6,
                          labels_min=1, labels_max=2)
    with pytest.raises(err.ConfigError):
        sd.split_zsl(ds, unseen_ids=())
    with pytest.raises(err.ConfigError):
        sd.split_zsl(ds, unseen_ids=(9,))
    with pytest.raises(err.ConfigError):
        sd.split_zsl(ds, unseen_ids=(0, 1, 2, 3))
    with pytest.raises(err.ConfigError):
        sd.split_zsl(ds, unseen_ids=(1,), policy="telepathy")


# ---------------------------------------------------------------------------
# synthetic generator


def test_generator_rejects_infeasible_requests():
    with pytest.raises(err.ConfigError):
        sd.gen_synthetic(samples=0)
    with pytest.raises(err.ConfigError):
        sd.gen_synthetic(labels_min=5, labels_max=2)
    with pytest.raises(err.ConfigError):
        sd.gen_synthetic(labels_max=99)
    with pytest.raises(err.ConfigError):
        sd.gen_synthetic(noise_sigma=-0.1)
    with pytest.raises(err.ConfigError):
        sd.gen_synthetic(split_fractions=(1.0, 1.0, 1.0))


def test_generator_is_bit_deterministic(tmp_path):
    a = sd.gen_synthetic(classes=5, patches=4, dim=6, raw_dim=8, samples=30, seed=11)
    b = sd.gen_synthetic(classes=5, patches=4, dim=6, raw_dim=8, samples=30, seed=11)
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.raw_patch, y.raw_patch)
        assert np.array_equal(x.labels, y.labels)
    pa, pb = tmp_path / "a.sigf", tmp_path / "b.sigf"
    sd.write_dataset(a, pa)
    sd.write_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_generator_label_counts_and_splits():
    ds = sd.gen_synthetic(classes=8, patches=16, dim=32, raw_dim=48, samples=100,
                          labels_min=2, labels_max=3, seed=0)
    counts = [int(np.sum(s.labels == 1)) for s in ds.samples]
    assert all(2 <= c <= 3 for c in counts)
    assert len(ds.train) == 70 and len(ds.val) == 15 and len(ds.test) == 15


def test_embeddings_are_unit_norm_and_quasi_orthogonal():
    ds = sd.gen_synthetic(classes=8, patches=4, dim=32, raw_dim=48, samples=4, seed=9,
                          labels_min=1, labels_max=1)
    emb = ds.label_space.embeddings
    gram = emb @ emb.T
    assert np.allclose(np.diag(gram), 1.0, atol=1e-12)
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-10  # orthonormalized when C <= D


def test_teacher_is_normalized_mean_of_positives():
    ds = sd.gen_synthetic(classes=6, patches=4, dim=12, raw_dim=16, samples=20, seed=13)
    emb = ds.label_space.embeddings
    for s in ds.samples:
        mean = emb[s.labels == 1].mean(axis=0)
        mean /= np.linalg.norm(mean)
        assert np.allclose(s.teacher_class, mean, atol=1e-12)


def test_zero_noise_plant_recovers_label_direction():
    emb, projection, _ = sd.synthetic_maps(classes=6, dim=16, raw_dim=24, seed=21)
    ds = sd.gen_synthetic(classes=6, patches=8, dim=16, raw_dim=24, samples=30, seed=21,
                          labels_min=1, labels_max=1, noise_sigma=0.0)
    assert np.array_equal(ds.label_space.embeddings, emb)
    for s in ds.samples:
        label = int(np.nonzero(s.labels == 1)[0][0])
        planted = np.nonzero(np.linalg.norm(s.raw_patch, axis=1) > 1e-9)[0]
        assert planted.size >= 1
        back = s.raw_patch[planted[0]] @ projection.T
        cos = back @ emb[label] / (np.linalg.norm(back) * np.linalg.norm(emb[label]))
        assert cos > 0.99


def brute_force_ap(scores, truth):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if truth[i]:
            hits += 1
            total += hits / rank
    return total / max(hits, 1)


def test_oracle_decoder_reaches_perfect_map():
    # nearest-label decoding of back-projected patches separates positives fully
    emb, projection, _ = sd.synthetic_maps(classes=6, dim=16, raw_dim=24, seed=31)
    ds = sd.gen_synthetic(classes=6, patches=8, dim=16, raw_dim=24, samples=40, seed=31,
                          labels_min=1, labels_max=3, noise_sigma=0.0)
    back = np.stack([s.raw_patch @ projection.T for s in ds.samples])  # (N, P, D)
    norms = np.maximum(np.linalg.norm(back, axis=2, keepdims=True), 1e-12)
    cos = (back / norms) @ emb.T  # (N, P, C)
    scores = cos.max(axis=1)
    truth = np.stack([s.labels == 1 for s in ds.samples])
    for c in range(6):
        if truth[:, c].any():
            assert brute_force_ap(scores[:, c], truth[:, c]) == 1.0
