"""Mini-batch stream construction and the SGD training loop.

The stream for one epoch is: index draw (shuffle for ERM and for epochs
before an optional re-balancing window, class-balanced over-sampling
otherwise) -> optional flip/crop augmentation -> Bernoulli
Universum replacement (inside the deferred window only).  Every random draw
comes from a named sub-stream of the run seed, so a batch depends only on
(seed, epoch, batch index).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .data import LabeledDataset
from .errors import ParameterError
from .metrics import top1_accuracy
from .model.augment import flip_crop
from .model.network import SGD, Model, TrainConfig, backward_and_step, learning_rate_at
from .sampling import (
    Batch,
    ClassStats,
    ReplacementSchedule,
    apply_replacement,
    compute_class_stats,
    oversample_epoch,
    shuffle_epoch,
    sub_rng,
)
from .universum import HoMuConfig, make_source

log = logging.getLogger(__name__)

METHODS = ("erm", "oversample", "cauirl", "cauirl_sc", "cauirl_external", "mixup_universum")
UNIVERSUM_MODE = {
    "cauirl": "batch",
    "cauirl_sc": "same_class",
    "cauirl_external": "external",
    "mixup_universum": "mixup",
}

# sub-stream tags
_SAMPLING, _AUGMENT, _REPLACE = 1, 2, 3


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


@dataclass
class PipelineConfig:
    method: str = "cauirl"
    lam: float = 0.5
    delta: float = 0.9
    defer_epochs: int | None = None
    epoch_len: int | None = None
    augment: bool = False
    crop_pad: int = 4
    flip: bool = True
    exclude_self: bool = False
    mixup_alpha: float | None = None
    rebalance_epochs: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.rebalance_epochs is not None and self.rebalance_epochs < 0:
            raise ParameterError(f"rebalance_epochs must be >= 0, got {self.rebalance_epochs}")
        if (self.rebalance_epochs is not None and self.defer_epochs is not None
                and self.defer_epochs > self.rebalance_epochs):
            raise ParameterError("replacement window (defer_epochs) cannot start before over-sampling "
                                 f"(rebalance_epochs): {self.defer_epochs} > {self.rebalance_epochs}")

    def resolved_defer(self, epochs: int) -> int:
        """Defaults to the last 20% of epochs."""
        if self.defer_epochs is None:
            return max(1, int(round(0.2 * epochs)))
        return int(self.defer_epochs)

    @property
    def rebalanced(self) -> bool:
        return self.method != "erm"

    def oversampling_at(self, epoch: int, epochs: int) -> bool:
        """Over-sampling runs every epoch unless ``rebalance_epochs`` limits it to the last N."""
        if not self.rebalanced:
            return False
        return self.rebalance_epochs is None or epoch >= epochs - self.rebalance_epochs

    @property
    def replaces(self) -> bool:
        return self.method in UNIVERSUM_MODE


def default_epoch_len(dataset: LabeledDataset, pipeline: PipelineConfig) -> int:
    if pipeline.epoch_len:
        return int(pipeline.epoch_len)
    if pipeline.rebalanced:
        counts = dataset.class_counts
        return int((counts > 0).sum() * counts.max())
    return len(dataset)


def epoch_batches(
    dataset: LabeledDataset,
    pipeline: PipelineConfig,
    stats: ClassStats,
    schedule: ReplacementSchedule | None,
    source: Callable | None,
    epoch: int,
    batch_size: int,
    seed: int,
    oversample: bool | None = None,
) -> Iterator[Batch]:
    if oversample is None:
        oversample = pipeline.rebalanced
    if oversample:
        order = oversample_epoch(dataset, stats, default_epoch_len(dataset, pipeline),
                                 derive_seed(seed, _SAMPLING), epoch)
    else:
        order = shuffle_epoch(dataset, derive_seed(seed, _SAMPLING), epoch)
    aug_seed = derive_seed(seed, _AUGMENT)
    for b, start in enumerate(range(0, order.shape[0], batch_size)):
        idx = order[start:start + batch_size]
        samples = dataset.samples[idx]
        if pipeline.augment:
            samples = flip_crop(samples, dataset.shape, sub_rng(aug_seed, epoch, b),
                                pad=pipeline.crop_pad, flip=pipeline.flip)
        batch = Batch.natural(samples, dataset.labels[idx])
        if schedule is not None and source is not None:
            batch = apply_replacement(batch, stats, source, epoch, schedule, batch_index=b)
        yield batch


def evaluate(model: Model, dataset: LabeledDataset):
    preds = model.predict(dataset.samples)
    return top1_accuracy(preds, dataset.labels, dataset.num_classes)


def fit(
    model: Model,
    train: LabeledDataset,
    test: LabeledDataset | None,
    pipeline: PipelineConfig,
    config: TrainConfig,
    seed: int | None = None,
    universum_source: Callable | None = None,
    universum_pool: LabeledDataset | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train ``model`` in place; returns one history row per epoch.

    ``universum_source`` overrides the method's default generator (the Bayes
    check plugs in an exact class-conditional sampler here).
    """
    seed = config.seed if seed is None else seed
    stats = compute_class_stats(train, pipeline.delta if pipeline.replaces else 0.0)
    schedule = source = None
    if pipeline.replaces:
        defer = pipeline.resolved_defer(config.epochs)
        if pipeline.rebalance_epochs is not None and defer > pipeline.rebalance_epochs:
            raise ParameterError(f"replacement window of {defer} epochs starts before over-sampling "
                                 f"(rebalance_epochs={pipeline.rebalance_epochs})")
        schedule = ReplacementSchedule(
            delta=pipeline.delta,
            defer_epochs=defer,
            total_epochs=config.epochs,
            rng_seed=derive_seed(seed, _REPLACE),
        )
        source = universum_source or make_source(
            HoMuConfig(pipeline.lam, UNIVERSUM_MODE[pipeline.method],
                       pipeline.exclude_self, pipeline.mixup_alpha),
            universum_pool,
        )
    model.astype(config.dtype)
    opt = SGD(model, config.momentum, config.weight_decay)
    history = []
    for epoch in range(config.epochs):
        lr = learning_rate_at(config, epoch)
        losses, weights = [], []
        n_universum = 0
        oversample = pipeline.oversampling_at(epoch, config.epochs)
        for batch in epoch_batches(train, pipeline, stats, schedule, source, epoch, config.batch_size, seed,
                                   oversample):
            loss, _ = backward_and_step(model, batch, opt, lr)
            losses.append(loss)
            weights.append(len(batch))
            n_universum += int(batch.universum_mask.sum())
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.average(losses, weights=weights)),
            "universum_rows": n_universum,
        }
        if test is not None:
            top1, per_class = evaluate(model, test)
            row["test_top1"] = top1
            row["per_class"] = per_class
        history.append(row)
        log.debug("epoch %d lr %.4g loss %.4f top1 %s", epoch, lr, row["train_loss"], row.get("test_top1"))
        if on_epoch is not None:
            on_epoch(row)
    return history
