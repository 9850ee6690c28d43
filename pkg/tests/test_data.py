import numpy as np
import pytest

from sld.data import (
    Augment,
    Dataset,
    DataFormatError,
    SynthSpec,
    augment,
    batches,
    class_centers,
    generate_confusable,
    load_csv,
    load_idx,
    train_val_split,
    write_idx,
)


def _idx_pair(tmp_path, n=6, h=4, w=4):
    imgs = (np.arange(n * h * w) % 256).astype(np.uint8).reshape(n, h, w)
    labels = (np.arange(n) % 3).astype(np.uint8)
    write_idx(tmp_path / "img.idx", imgs)
    write_idx(tmp_path / "lab.idx", labels)
    return imgs, labels


def test_idx_round_trip(tmp_path):
    imgs, labels = _idx_pair(tmp_path)
    ds = load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")
    assert ds.image_shape == (4, 4) and ds.num_classes == 3
    np.testing.assert_array_equal(ds.features, imgs.reshape(6, -1) / 255.0)
    np.testing.assert_array_equal(ds.targets, labels)


def test_idx_bad_magic(tmp_path):
    _idx_pair(tmp_path)
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(tmp_path / "lab.idx", tmp_path / "lab.idx")


def test_idx_count_mismatch(tmp_path):
    _idx_pair(tmp_path)
    write_idx(tmp_path / "lab.idx", np.zeros(5, dtype=np.uint8))
    with pytest.raises(DataFormatError, match="count"):
        load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


def test_idx_truncated(tmp_path):
    _idx_pair(tmp_path)
    raw = (tmp_path / "img.idx").read_bytes()
    (tmp_path / "img.idx").write_bytes(raw[:-1])
    with pytest.raises(DataFormatError, match="data bytes"):
        load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


def test_idx_label_out_of_range(tmp_path):
    _idx_pair(tmp_path)
    with pytest.raises(DataFormatError, match="outside"):
        load_idx(tmp_path / "img.idx", tmp_path / "lab.idx", num_classes=2)


def test_csv_load(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,f0,f1\n0,0.5,1.5\n2,-1,3\n")
    ds = load_csv(p)
    assert ds.num_classes == 3
    np.testing.assert_array_equal(ds.features, [[0.5, 1.5], [-1.0, 3.0]])


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "empty"),
        ("y,f0\n0,1\n", "header"),
        ("label,f0\n0,1,2\n", "fields"),
        ("label,f0\n0,abc\n", "d.csv:2"),
        ("label,f0\n", "no data"),
        ("label,f0\n0,nan\n", "non-finite"),
        ("label,f0\n-1,0\n", "outside"),
    ],
)
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(DataFormatError, match=match):
        load_csv(p)


def test_dataset_validation():
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(DataFormatError):
        Dataset(np.zeros(3), [0, 1, 0], 2)


# ---------------------------------------------------------------- synthetic


def test_synthetic_shape_and_balance():
    ds = generate_confusable(SynthSpec(samples_per_class=20, dim=30))
    assert ds.features.shape == (200, 30)
    assert np.all(np.bincount(ds.targets) == 20)


def test_synthetic_determinism():
    a = generate_confusable(SynthSpec(samples_per_class=5, dim=12, seed=3))
    b = generate_confusable(SynthSpec(samples_per_class=5, dim=12, seed=3))
    c = generate_confusable(SynthSpec(samples_per_class=5, dim=12, seed=4))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.features.tobytes() != c.features.tobytes()


def test_superclass_pairs_are_closer():
    spec = SynthSpec(dim=50, cluster_overlap=1.0)
    c = class_centers(spec)
    assert np.linalg.norm(c[0] - c[1]) == pytest.approx(2.0)
    assert np.linalg.norm(c[2] - c[3]) == pytest.approx(2.0)
    assert np.linalg.norm(c[4] - c[5]) > 4.0


def test_latent_embedding():
    ds = generate_confusable(SynthSpec(dim=40, latent_dim=8, samples_per_class=10))
    assert ds.features.shape == (100, 40)


@pytest.mark.parametrize(
    "kw",
    [
        dict(cluster_overlap=-1),
        dict(superclass_pairs=((0, 0),)),
        dict(superclass_pairs=((0, 10),)),
        dict(superclass_pairs=((0, 1), (1, 2))),
        dict(num_classes=1),
    ],
)
def test_synth_spec_validation(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


# ---------------------------------------------------------------- splitting and batching


def _small():
    return Dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 2, 2)


def test_split_partitions_dataset():
    tr, va = train_val_split(_small(), 0.3, 0)
    assert len(tr) == 7 and len(va) == 3
    rows = sorted(tuple(r) for r in np.concatenate([tr.features, va.features]))
    assert rows == sorted(tuple(r) for r in _small().features)


def test_split_bad_fraction():
    with pytest.raises(ValueError):
        train_val_split(_small(), 1.0, 0)


def test_batches_cover_each_index_once_with_partial_tail():
    got = list(batches(_small(), 4, seed=1, epoch=2))
    assert [len(b.targets) for b in got] == [4, 4, 2]
    idx = np.concatenate([b.indices for b in got])
    assert sorted(idx) == list(range(10))
    for b in got:
        np.testing.assert_array_equal(b.features, _small().features[b.indices])


def test_batches_reproducible_and_epoch_dependent():
    order = lambda e: np.concatenate([b.indices for b in batches(_small(), 3, 5, True, e)])
    assert np.array_equal(order(1), order(1))
    assert not np.array_equal(order(1), order(2))
    unshuffled = np.concatenate([b.indices for b in batches(_small(), 3, shuffle=False)])
    assert list(unshuffled) == list(range(10))


def test_augment_disabled_is_identity():
    x = np.random.default_rng(0).random((3, 4))
    assert augment(x, (2, 2), Augment(), 0, 1, 0) is x


def test_augment_flip_and_jitter():
    x = np.arange(8.0).reshape(2, 4) / 10
    flipped = augment(x, (2, 2), Augment(flip=True), 0, 1, 0)
    for row, orig in zip(flipped, x):
        img, o = row.reshape(2, 2), orig.reshape(2, 2)
        assert np.array_equal(img, o) or np.array_equal(img, o[:, ::-1])
    j = augment(x, None, Augment(jitter=0.5), 0, 1, 0)
    assert j.min() >= 0 and j.max() <= 1
    assert np.array_equal(j, augment(x, None, Augment(jitter=0.5), 0, 1, 0))


def test_flip_needs_image_shape():
    with pytest.raises(ValueError):
        augment(np.zeros((1, 4)), None, Augment(flip=True), 0, 1, 0)


def test_idx_fixture_written_byte_by_byte(tmp_path):
    # 4 samples of 2x3 pixels, built without write_idx
    pixels = bytes([0, 51, 102, 153, 204, 255] * 4)
    (tmp_path / "i").write_bytes(b"\x00\x00\x08\x03" + b"\x00\x00\x00\x04\x00\x00\x00\x02\x00\x00\x00\x03" + pixels)
    (tmp_path / "l").write_bytes(b"\x00\x00\x08\x01" + b"\x00\x00\x00\x04" + bytes([1, 0, 1, 0]))
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    assert ds.image_shape == (2, 3) and ds.num_classes == 2
    assert ds.features[0].tolist() == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert ds.targets.tolist() == [1, 0, 1, 0]


def test_idx_empty_file(tmp_path):
    _idx_pair(tmp_path)
    (tmp_path / "img.idx").write_bytes(b"")
    with pytest.raises(DataFormatError, match="too short"):
        load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")


def test_zero_overlap_is_linearly_separable():
    from sld.models import ModelSpec
    from sld.trainer import TrainSchedule, train_teacher

    ds = generate_confusable(SynthSpec(dim=30, samples_per_class=30, cluster_overlap=0.0, separation=8.0, seed=5))
    sched = TrainSchedule(epochs=30, batch_size=32, lr0=0.05, decay_epochs=(), seed=0)
    _, rep = train_teacher(ModelSpec((10,), 30, 10), ds, sched)  # single linear layer
    assert rep.final["train_top1"] > 0.99


def test_hundred_samples_batch_64():
    ds = Dataset(np.zeros((100, 2)), np.zeros(100, dtype=int), 2)
    assert [len(b.targets) for b in batches(ds, 64, seed=0)] == [64, 36]
