"""Class-balanced over-sampling and Bernoulli Universum replacement."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .data import LabeledDataset
from .errors import DegenerateClassError, ParameterError

# A Universum source returns the replacement for row ``i`` of a batch.  It is
# always handed the pristine (pre-replacement) batch.
UniversumSource = Callable[[np.ndarray, np.ndarray, int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    sampling_prob: np.ndarray
    representation_rate: np.ndarray
    replacement_prob: np.ndarray
    delta: float


@dataclass(frozen=True)
class Batch:
    samples: np.ndarray
    labels: np.ndarray
    universum_mask: np.ndarray

    @classmethod
    def natural(cls, samples, labels) -> "Batch":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(np.asarray(samples, dtype=np.float64), labels, np.zeros(labels.shape[0], dtype=bool))

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.samples.shape[0] != n or self.universum_mask.shape[0] != n:
            raise ParameterError("batch samples, labels and mask must share length")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class ReplacementSchedule:
    """Replacement is active for epochs ``total_epochs - defer_epochs .. total_epochs - 1``."""

    delta: float = 0.9
    defer_epochs: int = 0
    total_epochs: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError(f"delta must lie in [0, 1], got {self.delta}")
        if not 0 <= self.defer_epochs <= self.total_epochs:
            raise ParameterError(
                f"defer_epochs={self.defer_epochs} outside [0, total_epochs={self.total_epochs}]"
            )

    def active(self, epoch: int) -> bool:
        if not 0 <= epoch < self.total_epochs:
            raise ParameterError(f"epoch {epoch} outside schedule of {self.total_epochs} epochs")
        return epoch >= self.total_epochs - self.defer_epochs


def compute_class_stats(dataset: LabeledDataset, delta: float = 0.9) -> ClassStats:
    if not 0.0 <= delta <= 1.0:
        raise ParameterError(f"delta must lie in [0, 1], got {delta}")
    counts = np.asarray(dataset.class_counts, dtype=np.int64)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DegenerateClassError(f"class {int(empty[0])} has no samples")
    inv = 1.0 / counts
    rep = counts / counts.max()
    return ClassStats(
        counts=counts,
        sampling_prob=inv / inv.sum(),
        representation_rate=rep,
        replacement_prob=(1.0 - rep) * delta,
        delta=float(delta),
    )


def sub_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent named stream for (seed, *keys)."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def oversample_epoch(
    dataset: LabeledDataset, stats: ClassStats, epoch_len: int, seed: int, epoch: int = 0
) -> np.ndarray:
    """Class drawn uniformly, then an instance uniformly within it, with replacement.

    Equivalent to instance draws weighted by ``stats.sampling_prob``.
    """
    if epoch_len <= 0:
        raise ParameterError(f"epoch_len must be positive, got {epoch_len}")
    rng = sub_rng(seed, epoch)
    present = np.flatnonzero(stats.counts > 0)
    by_class = [dataset.class_indices(c) for c in present]
    cls = rng.integers(0, present.size, size=epoch_len)
    within = rng.random(epoch_len)
    sizes = np.array([b.size for b in by_class])
    offsets = np.floor(within * sizes[cls]).astype(np.int64)
    pool = np.concatenate(by_class)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return pool[starts[cls] + offsets]


def shuffle_epoch(dataset: LabeledDataset, seed: int, epoch: int = 0) -> np.ndarray:
    """Plain permutation of the dataset (no re-balancing)."""
    return sub_rng(seed, epoch).permutation(len(dataset))


def apply_replacement(
    batch: Batch,
    stats: ClassStats,
    universum_source: UniversumSource,
    epoch: int,
    schedule: ReplacementSchedule,
    batch_index: int = 0,
) -> Batch:
    """Replace each class-``c`` row with a Universum row w.p. ``replacement_prob[c]``.

    Labels are kept: the Universum row takes the target class label.
    """
    if batch.universum_mask.any():
        raise ParameterError("batch already carries Universum rows")
    if not schedule.active(epoch):
        return batch
    rng = sub_rng(schedule.rng_seed, epoch, batch_index)
    p_u = stats.replacement_prob[batch.labels]
    flags = rng.random(len(batch)) < p_u
    if not flags.any():
        return batch
    pristine = batch.samples
    out = pristine.copy()
    for i in np.flatnonzero(flags):
        out[i] = universum_source(pristine, batch.labels, int(i), rng)
    return replace(batch, samples=out, universum_mask=flags)
