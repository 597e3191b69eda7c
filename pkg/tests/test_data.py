import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cauirl.data import (
    CIFAR_TRAIN_FILES,
    GaussianTask,
    LabeledDataset,
    LTProfile,
    load_cifar10,
    load_idx,
    load_npz,
    make_long_tailed,
    read_cifar_batch,
    sample_gaussian_task,
    save_npz,
    write_cifar_batch,
    write_idx,
)
from cauirl.errors import (
    CapacityError,
    ConsistencyError,
    CorruptRecordError,
    DecompositionError,
    FormatError,
)


def cifar_record(label, fill):
    return bytes([label]) + bytes([fill % 256]) * 3072


def test_two_record_cifar_file(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(cifar_record(3, 0) + cifar_record(7, 255))
    ds = read_cifar_batch(path)
    assert len(ds) == 2
    assert ds.shape == (3, 32, 32)
    assert ds.class_counts[3] == 1 and ds.class_counts[7] == 1
    assert ds.class_counts.sum() == 2
    assert np.all(ds.samples[0] == 0.0) and np.all(ds.samples[1] == 1.0)


def test_cifar_plane_layout(tmp_path):
    # first 1024 pixel bytes are the red plane, row-major
    pixels = bytearray(3072)
    pixels[0] = 255          # R, row 0, col 0
    pixels[1024 + 33] = 51   # G, row 1, col 1
    (tmp_path / "b.bin").write_bytes(bytes([1]) + bytes(pixels))
    img = read_cifar_batch(tmp_path / "b.bin").samples[0].reshape(3, 32, 32)
    assert img[0, 0, 0] == 1.0
    assert img[1, 1, 1] == pytest.approx(0.2)
    assert img.sum() == pytest.approx(1.2)


def test_cifar_directory_loader(tmp_path):
    for i, name in enumerate(CIFAR_TRAIN_FILES):
        (tmp_path / name).write_bytes(cifar_record(i, i) + cifar_record(9 - i, i))
    ds = load_cifar10(tmp_path)
    assert len(ds) == 10
    assert ds.class_counts.tolist() == [1] * 10


def test_cifar_empty_directory(tmp_path):
    with pytest.raises(FormatError, match="data_batch_1.bin"):
        load_cifar10(tmp_path)


def test_cifar_truncated_names_offset(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(cifar_record(1, 0) + cifar_record(2, 0)[:100])
    with pytest.raises(FormatError, match="offset 3073"):
        read_cifar_batch(path)


def test_cifar_bad_label(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(cifar_record(1, 0) + cifar_record(10, 0))
    with pytest.raises(CorruptRecordError, match="offset 3073"):
        read_cifar_batch(path)


def test_cifar_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(5, 3072))
    ds = LabeledDataset(raw / 255.0, [0, 4, 4, 9, 2], (3, 32, 32), 10)
    write_cifar_batch(tmp_path / "b.bin", ds)
    assert read_cifar_batch(tmp_path / "b.bin").equals(ds)


def idx_pair(tmp_path, pixels, labels, h, w):
    n = len(labels)
    (tmp_path / "img").write_bytes(struct.pack(">4I", 0x803, n, h, w) + bytes(pixels))
    (tmp_path / "lab").write_bytes(struct.pack(">2I", 0x801, n) + bytes(labels))
    return tmp_path / "img", tmp_path / "lab"


def test_idx_hand_built(tmp_path):
    img, lab = idx_pair(tmp_path, [0, 255, 128, 64], [5], 2, 2)
    ds = load_idx(img, lab)
    assert ds.shape == (1, 2, 2)
    np.testing.assert_allclose(ds.samples[0], [0.0, 1.0, 128 / 255, 64 / 255], rtol=0, atol=1e-15)
    assert ds.samples[0, 2] == pytest.approx(0.50196, abs=1e-5)
    assert ds.samples[0, 3] == pytest.approx(0.25098, abs=1e-5)


def test_idx_swapped_arguments(tmp_path):
    img, lab = idx_pair(tmp_path, [0, 255, 128, 64], [5], 2, 2)
    with pytest.raises(FormatError, match="magic"):
        load_idx(lab, img)


def test_idx_count_mismatch(tmp_path):
    (tmp_path / "img").write_bytes(struct.pack(">4I", 0x803, 2, 1, 1) + bytes([1, 2]))
    (tmp_path / "lab").write_bytes(struct.pack(">2I", 0x801, 1) + bytes([0]))
    with pytest.raises(ConsistencyError):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_gzip_and_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ds = LabeledDataset(rng.integers(0, 256, (7, 12)) / 255.0, rng.integers(0, 10, 7), (1, 3, 4), 10)
    write_idx(tmp_path / "i", tmp_path / "l", ds)
    for name in ("i", "l"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    assert load_idx(tmp_path / "i", tmp_path / "l").equals(ds)
    assert load_idx(tmp_path / "i.gz", tmp_path / "l.gz").equals(ds)


def reference_idx_reader(path):
    """Independent reader: plain struct walk over the header."""
    raw = open(path, "rb").read()
    zero, dtype, ndim = raw[0] * 256 + raw[1], raw[2], raw[3]
    assert zero == 0 and dtype == 0x08
    dims = [int.from_bytes(raw[4 + 4 * k:8 + 4 * k], "big") for k in range(ndim)]
    body = raw[4 + 4 * ndim:]
    return dims, list(body)


def test_idx_against_reference_reader(tmp_path):
    rng = np.random.default_rng(2)
    ds = LabeledDataset(rng.integers(0, 256, (4, 6)) / 255.0, [1, 0, 3, 3], (1, 2, 3), 10)
    write_idx(tmp_path / "i", tmp_path / "l", ds)
    dims, body = reference_idx_reader(tmp_path / "i")
    _, labels = reference_idx_reader(tmp_path / "l")
    loaded = load_idx(tmp_path / "i", tmp_path / "l")
    assert dims == [4, 2, 3]
    assert loaded.labels.tolist() == labels
    np.testing.assert_array_equal(loaded.samples.ravel() * 255, body)


def test_npz_round_trip(tmp_path):
    ds = LabeledDataset(np.random.default_rng(0).random((6, 4)), [0, 1, 2, 0, 1, 2], (4,), 3)
    save_npz(tmp_path / "d.npz", ds, {"seed": 1})
    assert load_npz(tmp_path / "d.npz").equals(ds)


def test_dataset_invariants_enforced():
    with pytest.raises(ConsistencyError):
        LabeledDataset(np.zeros((2, 3)), [0], (3,), 2)
    with pytest.raises(ConsistencyError):
        LabeledDataset(np.zeros((1, 3)), [2], (3,), 2)


# ---------------------------------------------------------------------------
# long-tailed profiles


def test_cifar10_profile_v100():
    profile = LTProfile.exponential(10, 100, 5000)
    expected = [int(math.floor(5000 * 100 ** (-c / 9) + 1e-9)) for c in range(10)]
    assert expected == [5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50]
    assert list(profile.per_class_targets) == expected


def test_cifar10_profile_v50_smallest_class():
    assert LTProfile.exponential(10, 50, 5000).per_class_targets[-1] == 100


def test_identity_profile():
    assert set(LTProfile.exponential(10, 1, 5000).per_class_targets) == {5000}


@settings(max_examples=60, deadline=None)
@given(
    c=st.integers(2, 20),
    v=st.floats(1.0, 200.0),
    n=st.integers(10, 6000),
)
def test_profile_properties(c, v, n):
    t = LTProfile.exponential(c, v, n).per_class_targets
    assert t[0] == n
    assert all(a >= b for a, b in zip(t, t[1:]))
    # realized ratio within one sample of v at the small end
    assert abs(t[-1] - n / v) <= 1


def balanced(n_per=20, c=4, d=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(c), n_per)
    return LabeledDataset(rng.random((n_per * c, d)), labels, (d,), c)


def test_make_long_tailed_counts_and_determinism():
    ds = balanced()
    profile = LTProfile.exponential(4, 10, 20)
    a = make_long_tailed(ds, profile, seed=3)
    b = make_long_tailed(ds, profile, seed=3)
    assert a.class_counts.tolist() == list(profile.per_class_targets)
    assert a.equals(b)
    assert not a.equals(make_long_tailed(ds, profile, seed=4))
    # re-applying to its own output changes nothing
    assert make_long_tailed(a, LTProfile(4, 10.0, 20, profile.per_class_targets), seed=3).equals(a)


def test_make_long_tailed_rows_come_from_their_class():
    ds = balanced()
    lt = make_long_tailed(ds, LTProfile.exponential(4, 5, 20), seed=0)
    rows = {tuple(r): l for r, l in zip(ds.samples, ds.labels)}
    assert all(rows[tuple(r)] == l for r, l in zip(lt.samples, lt.labels))


def test_make_long_tailed_capacity():
    ds = balanced(n_per=10)
    with pytest.raises(CapacityError, match="class 0"):
        make_long_tailed(ds, LTProfile.exponential(4, 2, 11), seed=0)


def test_lt_values_stay_in_unit_interval():
    ds = balanced()
    lt = make_long_tailed(ds, LTProfile.exponential(4, 4, 20), seed=0)
    assert lt.samples.min() >= 0 and lt.samples.max() <= 1


# ---------------------------------------------------------------------------
# Gaussian tasks


def two_gaussians():
    return GaussianTask([[-1.0, 0.0], [1.0, 0.0]], np.eye(2), [0.5, 0.5], [0.5, 0.5])


def test_gaussian_means_clt_bound():
    ds = sample_gaussian_task(two_gaussians(), [1000, 1000], seed=7)
    for c, mean in enumerate([[-1.0, 0.0], [1.0, 0.0]]):
        emp = ds.samples[ds.labels == c].mean(axis=0)
        assert np.all(np.abs(emp - mean) < 4 / math.sqrt(1000))


def test_gaussian_empty_and_bookkeeping():
    assert len(sample_gaussian_task(two_gaussians(), [0, 0], 0)) == 0
    assert sample_gaussian_task(two_gaussians(), [500, 5], 0).class_counts.tolist() == [500, 5]


def test_gaussian_deterministic():
    a = sample_gaussian_task(two_gaussians(), [30, 30], 5)
    assert a.equals(sample_gaussian_task(two_gaussians(), [30, 30], 5))


def test_gaussian_non_pd_covariance():
    task = GaussianTask([[0.0, 0.0], [1.0, 1.0]], [[1.0, 2.0], [2.0, 1.0]], [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(DecompositionError):
        sample_gaussian_task(task, [5, 5], 0)


def test_imbalanced_sample_is_prefix_of_balanced():
    big = sample_gaussian_task(two_gaussians(), [50, 50], 9)
    small = sample_gaussian_task(two_gaussians(), [50, 4], 9)
    np.testing.assert_array_equal(small.samples[50:], big.samples[50:54])
