"""Class-aware Universum generators.

Higher-order mixup pulls a sample toward the mean of its mini-batch:
``x_u = (1 - lam) * mean(batch) + lam * x``.  The ``*_source`` factories wrap
each generator into the callable form expected by
:func:`cauirl.sampling.apply_replacement`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import CapacityError, ParameterError

MODES = ("batch", "same_class", "external", "mixup")


@dataclass(frozen=True)
class HoMuConfig:
    lam: float = 0.5
    mode: str = "batch"
    exclude_self: bool = False
    mixup_alpha: float | None = None

    def __post_init__(self):
        _check_lambda(self.lam)
        if self.mode not in MODES:
            raise ParameterError(f"unknown Universum mode {self.mode!r}; expected one of {MODES}")


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"mixing coefficient must lie in [0, 1], got {lam}")


def homu(batch_samples: np.ndarray, target_index: int, lam: float, exclude_self: bool = False) -> np.ndarray:
    batch = np.asarray(batch_samples, dtype=np.float64)
    _check_lambda(lam)
    n = batch.shape[0]
    if n == 0:
        raise ParameterError("higher-order mixup needs a nonempty batch")
    if not 0 <= target_index < n:
        raise ParameterError(f"target index {target_index} outside batch of {n}")
    x = batch[target_index]
    if exclude_self:
        if n == 1:
            return x.copy()
        mean = (batch.sum(axis=0) - x) / (n - 1)
    else:
        mean = batch.mean(axis=0)
    return (1.0 - lam) * mean + lam * x


def homu_same_class(class_samples: np.ndarray, target_index: int, lam: float) -> np.ndarray:
    """Higher-order mixup restricted to rows of the target's class."""
    class_samples = np.asarray(class_samples, dtype=np.float64)
    if class_samples.shape[0] < 1:
        raise ParameterError("same-class mixup needs at least one same-class sample")
    return homu(class_samples, target_index, lam)


def mixup_pair(x_i: np.ndarray, x_j: np.ndarray, lam: float) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    _check_lambda(lam)
    if x_i.shape != x_j.shape:
        raise ParameterError(f"shape mismatch {x_i.shape} vs {x_j.shape}")
    return lam * x_i + (1.0 - lam) * x_j


def external_universum(pool: LabeledDataset, class_label: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = pool.class_indices(class_label)
    if idx.size == 0:
        raise CapacityError(f"Universum pool has no samples assigned to class {class_label}")
    return pool.samples[idx[rng.integers(idx.size)]].copy()


# ---------------------------------------------------------------------------
# sources


def batch_source(lam: float = 0.5, exclude_self: bool = False):
    _check_lambda(lam)

    def source(samples, labels, i, rng):
        return homu(samples, i, lam, exclude_self)

    return source


def same_class_source(lam: float = 0.5):
    _check_lambda(lam)

    def source(samples, labels, i, rng):
        same = np.flatnonzero(labels == labels[i])
        return homu_same_class(samples[same], int(np.searchsorted(same, i)), lam)

    return source


def external_source(pool: LabeledDataset):
    def source(samples, labels, i, rng):
        return external_universum(pool, int(labels[i]), rng)

    return source


def mixup_source(lam: float = 0.5, alpha: float | None = None):
    """Pairwise mixup with a random batch partner; ``alpha`` switches to Beta(alpha, alpha) draws."""
    _check_lambda(lam)

    def source(samples, labels, i, rng):
        j = int(rng.integers(samples.shape[0]))
        mix = float(rng.beta(alpha, alpha)) if alpha else lam
        return mixup_pair(samples[i], samples[j], mix)

    return source


def make_source(config: HoMuConfig, pool: LabeledDataset | None = None):
    if config.mode == "batch":
        return batch_source(config.lam, config.exclude_self)
    if config.mode == "same_class":
        return same_class_source(config.lam)
    if config.mode == "mixup":
        return mixup_source(config.lam, config.mixup_alpha)
    if pool is None:
        raise ParameterError("external Universum mode needs a pool dataset")
    return external_source(pool)
