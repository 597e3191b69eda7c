"""Datasets: bit-exact CIFAR/IDX readers and writers, long-tailed subsampling,
and synthetic Gaussian classification tasks."""

from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    CapacityError,
    ConsistencyError,
    CorruptRecordError,
    DecompositionError,
    FormatError,
    ParameterError,
)

CIFAR_SHAPE = (3, 32, 32)
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    """Flat real-valued samples (one row each) with integer labels.

    ``shape`` is the per-sample tensor shape; rows have ``prod(shape)`` entries.
    Arrays are copied and made read-only on construction.
    """

    samples: np.ndarray
    labels: np.ndarray
    shape: tuple[int, ...]
    num_classes: int
    class_counts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        shape = tuple(int(s) for s in self.shape)
        if samples.ndim != 2:
            samples = samples.reshape(len(labels), -1) if samples.size else samples.reshape(0, math.prod(shape))
        if samples.shape[0] != labels.shape[0]:
            raise ConsistencyError(
                f"{samples.shape[0]} sample rows but {labels.shape[0]} labels"
            )
        if samples.shape[1] != math.prod(shape):
            raise ConsistencyError(
                f"row length {samples.shape[1]} does not match shape {shape}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConsistencyError(f"labels outside 0..{self.num_classes - 1}")
        samples.setflags(write=False)
        labels.setflags(write=False)
        counts = np.bincount(labels, minlength=self.num_classes).astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "class_counts", counts)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.samples[indices], self.labels[indices], self.shape, self.num_classes)

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            self.shape == other.shape
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and self.samples.tobytes() == other.samples.tobytes()
        )


# ---------------------------------------------------------------------------
# CIFAR binary batches


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: file missing (byte offset 0)")
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def read_cifar_batch(path, num_classes: int = 10) -> LabeledDataset:
    """Read one CIFAR binary batch: records of 1 label byte + 3072 pixel bytes."""
    raw = _read_bytes(path)
    if len(raw) == 0:
        raise FormatError(f"{path}: empty file (byte offset 0)")
    n, rem = divmod(len(raw), CIFAR_RECORD)
    if rem:
        raise FormatError(f"{path}: truncated record at byte offset {n * CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        off = int(bad[0]) * CIFAR_RECORD
        raise CorruptRecordError(
            f"{path}: label byte {labels[bad[0]]} >= {num_classes} at byte offset {off}"
        )
    samples = records[:, 1:].astype(np.float64) / 255.0
    return LabeledDataset(samples, labels, CIFAR_SHAPE, num_classes)


def load_cifar10(dir_path, train: bool = True) -> LabeledDataset:
    dir_path = Path(dir_path)
    names = CIFAR_TRAIN_FILES if train else CIFAR_TEST_FILES
    parts = [read_cifar_batch(dir_path / name) for name in names]
    return concat(parts)


def write_cifar_batch(path, dataset: LabeledDataset) -> None:
    if dataset.dim != CIFAR_RECORD - 1:
        raise ParameterError(f"CIFAR records need 3072 values per row, got {dataset.dim}")
    out = np.empty((len(dataset), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = dataset.labels
    out[:, 1:] = _to_bytes(dataset.samples)
    Path(path).write_bytes(out.tobytes())


def _to_bytes(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(samples * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# IDX (MNIST-family)


def _parse_idx(path, magic: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header (byte offset 0)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header (byte offset {len(raw)})")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + math.prod(dims)
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for dims {dims}, found {len(raw)} "
            f"(byte offset {min(len(raw), expected)})"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> LabeledDataset:
    images = _parse_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _parse_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    n, h, w = images.shape
    if num_classes is None:
        num_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    return LabeledDataset(images.reshape(n, h * w) / 255.0, labels, (1, h, w), num_classes)


def write_idx(images_path, labels_path, dataset: LabeledDataset) -> None:
    if len(dataset.shape) != 3 or dataset.shape[0] != 1:
        raise ParameterError(f"IDX images need shape 1xHxW, got {dataset.shape}")
    _, h, w = dataset.shape
    n = len(dataset)
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, n, h, w) + _to_bytes(dataset.samples).tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


# ---------------------------------------------------------------------------
# native artifact format (used for LT datasets written by the CLI)


def save_npz(path, dataset: LabeledDataset, manifest: dict | None = None) -> None:
    np.savez(
        path,
        samples=dataset.samples,
        labels=dataset.labels,
        shape=np.asarray(dataset.shape, dtype=np.int64),
        num_classes=np.int64(dataset.num_classes),
        manifest=np.asarray(json.dumps(manifest or {}, sort_keys=True)),
    )


def load_npz(path) -> LabeledDataset:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: file missing (byte offset 0)")
    with np.load(path, allow_pickle=False) as z:
        return LabeledDataset(z["samples"], z["labels"], tuple(z["shape"]), int(z["num_classes"]))


def concat(parts: Sequence[LabeledDataset]) -> LabeledDataset:
    if not parts:
        raise ParameterError("nothing to concatenate")
    first = parts[0]
    return LabeledDataset(
        np.concatenate([p.samples for p in parts]),
        np.concatenate([p.labels for p in parts]),
        first.shape,
        max(p.num_classes for p in parts),
    )


def load_digits_split(train_per_class: int = 144, test_per_class: int = 30, seed: int = 0):
    """Balanced train/test split of scikit-learn's bundled 8x8 digits.

    The only real image data available without a download; used as the
    desk-scale stand-in when CIFAR-10 / Fashion-MNIST files are absent.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    x = digits.data / 16.0
    y = digits.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(y == c)
        if idx.size < train_per_class + test_per_class:
            raise CapacityError(f"class {c} has only {idx.size} digits")
        idx = rng.permutation(idx)
        test_idx.append(np.sort(idx[:test_per_class]))
        train_idx.append(np.sort(idx[test_per_class:test_per_class + train_per_class]))
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return (
        LabeledDataset(x[train_idx], y[train_idx], (1, 8, 8), 10),
        LabeledDataset(x[test_idx], y[test_idx], (1, 8, 8), 10),
    )


# ---------------------------------------------------------------------------
# long-tailed profiles


@dataclass(frozen=True)
class LTProfile:
    num_classes: int
    imbalance_rate: float
    base_count: int
    per_class_targets: tuple[int, ...]

    @classmethod
    def exponential(cls, num_classes: int, imbalance_rate: float, base_count: int) -> "LTProfile":
        if imbalance_rate < 1:
            raise ParameterError(f"imbalance rate must be >= 1, got {imbalance_rate}")
        if num_classes < 1 or base_count < 1:
            raise ParameterError("num_classes and base_count must be positive")
        if num_classes == 1:
            targets = (int(base_count),)
        else:
            # floor, with slack for values that are integral in exact arithmetic
            targets = tuple(
                int(math.floor(base_count * imbalance_rate ** (-c / (num_classes - 1)) + 1e-9))
                for c in range(num_classes)
            )
        return cls(num_classes, float(imbalance_rate), int(base_count), targets)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "imbalance_rate": self.imbalance_rate,
            "base_count": self.base_count,
            "per_class_targets": list(self.per_class_targets),
        }


def make_long_tailed(balanced: LabeledDataset, profile: LTProfile, seed: int) -> LabeledDataset:
    """Keep the first ``per_class_targets[c]`` rows of a seeded shuffle of each class.

    Retained rows keep their original relative order, so re-applying the same
    profile and seed to the output returns it unchanged.
    """
    if profile.num_classes != balanced.num_classes:
        raise ParameterError(
            f"profile has {profile.num_classes} classes, dataset has {balanced.num_classes}"
        )
    rng = np.random.default_rng(seed)
    keep = []
    for c, target in enumerate(profile.per_class_targets):
        idx = balanced.class_indices(c)
        if target > idx.size:
            raise CapacityError(f"class {c}: target {target} exceeds available {idx.size}")
        keep.append(rng.permutation(idx)[:target])
    return balanced.subset(np.sort(np.concatenate(keep)))


# ---------------------------------------------------------------------------
# Gaussian tasks


@dataclass(frozen=True)
class GaussianTask:
    class_means: np.ndarray
    class_covariance: np.ndarray
    train_priors: np.ndarray
    test_priors: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.class_means, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.class_covariance, dtype=np.float64))
        c, d = means.shape
        if cov.shape != (d, d):
            raise ParameterError(f"covariance shape {cov.shape} does not match dimension {d}")
        for name in ("train_priors", "test_priors"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            if p.shape != (c,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ParameterError(f"{name} must be a probability vector of length {c}")
            object.__setattr__(self, name, p)
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "class_covariance", cov)

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    def cholesky(self) -> np.ndarray:
        cov = self.class_covariance
        if not np.allclose(cov, cov.T):
            raise DecompositionError("covariance is not symmetric")
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError(f"covariance is not positive definite: {exc}") from exc

    def draw(self, c: int, n: int, rng: np.random.Generator) -> np.ndarray:
        chol = self.cholesky()
        return self.class_means[c] + rng.standard_normal((n, self.dim)) @ chol.T


def sample_gaussian_task(task: GaussianTask, n_per_class: Sequence[int], seed: int) -> LabeledDataset:
    if len(n_per_class) != task.num_classes:
        raise ParameterError(
            f"{len(n_per_class)} class sizes given for {task.num_classes} classes"
        )
    task.cholesky()
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c, n in enumerate(n_per_class):
        xs.append(task.draw(c, int(n), rng))
        ys.append(np.full(int(n), c, dtype=np.int64))
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), (task.dim,), task.num_classes)
