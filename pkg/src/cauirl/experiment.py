"""One training run end to end: data -> fit -> metrics CSV, checkpoint, report."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import RunConfig, resolve_data_path
from .data import (
    LabeledDataset,
    LTProfile,
    load_cifar10,
    load_digits_split,
    load_idx,
    load_npz,
    make_long_tailed,
)
from .errors import ParameterError
from .metrics import c2g, group_accuracy, spearman, write_csv
from .model.checkpoint import save_checkpoint
from .model.network import build_model, extract_features
from .training import PipelineConfig, fit

log = logging.getLogger(__name__)


def load_balanced(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Balanced (pre long-tail) training set and the test set for the configured source."""
    ds = cfg.dataset
    if ds.source == "digits":
        return load_digits_split(ds.digits_train_per_class, ds.digits_test_per_class)
    root = resolve_data_path(ds.path)
    if ds.source == "cifar10":
        return load_cifar10(root, train=True), load_cifar10(root, train=False)
    if ds.source == "idx":
        train = load_idx(root / ds.train_images, root / ds.train_labels)
        test = load_idx(root / ds.test_images, root / ds.test_labels, train.num_classes)
        return train, test
    if not ds.train_file or not ds.test_file:
        raise ParameterError("npz source needs dataset.train_file and dataset.test_file")
    return load_npz(resolve_data_path(ds.train_file)), load_npz(resolve_data_path(ds.test_file))


def lt_profile(cfg: RunConfig, balanced: LabeledDataset) -> LTProfile:
    base = cfg.dataset.base_count or int(balanced.class_counts.max())
    return LTProfile.exponential(balanced.num_classes, cfg.dataset.imbalance_rate, base)


def load_run_data(cfg: RunConfig):
    balanced, test = load_balanced(cfg)
    profile = lt_profile(cfg, balanced)
    train = make_long_tailed(balanced, profile, cfg.dataset.seed)
    return train, test, profile


def pipeline_config(cfg: RunConfig) -> PipelineConfig:
    u = cfg.universum
    return PipelineConfig(
        method=cfg.method,
        lam=u.lam,
        delta=u.delta,
        defer_epochs=u.defer_epochs,
        epoch_len=cfg.epoch_len,
        augment=cfg.augment,
        crop_pad=cfg.crop_pad,
        flip=cfg.flip,
        exclude_self=u.exclude_self,
        mixup_alpha=u.mixup_alpha,
        rebalance_epochs=cfg.rebalance_epochs,
    )


def architecture(cfg: RunConfig, train: LabeledDataset) -> dict:
    return {
        "kind": cfg.model.kind,
        "input_shape": list(train.shape),
        "num_classes": train.num_classes,
        "widths": list(cfg.model.widths),
        "head_init": cfg.model.head_init,
        "bn_momentum": cfg.model.bn_momentum,
    }


def provenance(cfg: RunConfig, seed: int) -> dict:
    return {"config": cfg.to_dict(), "seed": seed}


def metrics_columns(num_classes: int) -> list[str]:
    return ["epoch", "lr", "train_loss", "test_top1", "universum_rows"] + [
        f"acc_class_{c}" for c in range(num_classes)
    ]


def tail_classes(train_counts, fraction: float = 0.4) -> list[int]:
    order = sorted(range(len(train_counts)), key=lambda k: (-train_counts[k], k))
    n = max(1, int(round(fraction * len(order))))
    return order[-n:]


def run_training(cfg: RunConfig, seed: int, out_dir: str | Path | None = None, data=None) -> dict:
    """Train one seed; writes ``metrics.csv``, ``checkpoint.npz``, ``report.json`` under ``out_dir``."""
    start = time.perf_counter()
    train, test, profile = data or load_run_data(cfg)
    pool = load_npz(resolve_data_path(cfg.universum.external_pool)) if cfg.universum.external_pool else None
    out = Path(out_dir) if out_dir is not None else None
    header = provenance(cfg, seed)

    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "metrics.csv", metrics_columns(train.num_classes), [], header)
        fh = open(out / "metrics.csv", "a", newline="")

    def on_epoch(row):
        if fh is None:
            return
        values = [row["epoch"], repr(row["lr"]), repr(row["train_loss"]), repr(row["test_top1"]),
                  row["universum_rows"], *(repr(float(a)) for a in row["per_class"])]
        fh.write(",".join(str(v) for v in values) + "\n")
        fh.flush()

    model = build_model(architecture(cfg, train), seed)
    train_cfg = cfg.train
    try:
        history = fit(model, train, test, pipeline_config(cfg), train_cfg, seed=seed,
                      universum_pool=pool, on_epoch=on_epoch)
    finally:
        if fh is not None:
            fh.close()

    last = history[-1]
    groups = group_accuracy(last["per_class"], train.class_counts, cfg.n_groups, last["test_top1"])
    report = {
        **header,
        "method": cfg.method,
        "top1": last["test_top1"],
        "per_class": [float(a) for a in last["per_class"]],
        "groups": groups.groups,
        "group_accuracy": groups.group_accuracy,
        "train_counts": train.class_counts.tolist(),
        "lt_profile": profile.to_dict(),
    }
    if cfg.c2g:
        rep = c2g(extract_features(model, train), train.labels, extract_features(model, test), test.labels,
                  num_classes=train.num_classes)
        tail = tail_classes(train.class_counts.tolist())
        report["c2g"] = {
            "per_class_gap": rep.per_class_gap.tolist(),
            "mean_gap": rep.mean_gap,
            "spearman_class_index": spearman(np.arange(train.num_classes), rep.per_class_gap),
            "tail_classes": tail,
            "tail_mean_gap": float(np.mean(rep.per_class_gap[tail])),
        }
    report["wall_time_s"] = time.perf_counter() - start
    if out is not None:
        if cfg.save_checkpoint:
            save_checkpoint(out / "checkpoint.npz", model, header)
        (out / "report.json").write_text(json.dumps(report, indent=2))
    report["_model"] = model
    return report


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def summarize(reports: list[dict]) -> dict:
    top1 = [r["top1"] for r in reports]
    groups = np.array([r["group_accuracy"] for r in reports])
    out = {
        "seeds": [r["seed"] for r in reports],
        "top1_mean": mean_stderr(top1)[0],
        "top1_stderr": mean_stderr(top1)[1],
        "group_accuracy_mean": groups.mean(axis=0).tolist(),
        "group_accuracy_stderr": [mean_stderr(groups[:, g])[1] for g in range(groups.shape[1])],
    }
    if all("c2g" in r for r in reports):
        out["c2g_spearman_mean"] = float(np.mean([r["c2g"]["spearman_class_index"] for r in reports]))
        out["c2g_tail_mean"] = float(np.mean([r["c2g"]["tail_mean_gap"] for r in reports]))
        out["c2g_per_class_mean"] = np.mean([r["c2g"]["per_class_gap"] for r in reports], axis=0).tolist()
    return out
