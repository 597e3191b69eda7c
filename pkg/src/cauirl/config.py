"""Run configuration: YAML file -> nested dataclasses, with CLI overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ParameterError
from .model.network import TrainConfig
from .training import METHODS

DATA_ENV = "CAUIRL_DATA_DIR"
SOURCES = ("digits", "cifar10", "idx", "npz")


@dataclass
class DatasetConfig:
    source: str = "digits"
    path: str = ""
    train_images: str = "train-images-idx3-ubyte.gz"
    train_labels: str = "train-labels-idx1-ubyte.gz"
    test_images: str = "t10k-images-idx3-ubyte.gz"
    test_labels: str = "t10k-labels-idx1-ubyte.gz"
    train_file: str = ""
    test_file: str = ""
    imbalance_rate: float = 100.0
    base_count: int | None = None
    seed: int = 0
    digits_train_per_class: int = 144
    digits_test_per_class: int = 30

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ParameterError(f"unknown dataset source {self.source!r}; expected one of {SOURCES}")
        if self.imbalance_rate < 1:
            raise ParameterError(f"imbalance_rate must be >= 1, got {self.imbalance_rate}")


@dataclass
class UniversumConfig:
    lam: float = 0.5
    delta: float = 0.9
    defer_epochs: int | None = None
    external_pool: str = ""
    exclude_self: bool = False
    mixup_alpha: float | None = None


@dataclass
class ModelConfig:
    kind: str = "cnn"
    widths: list[int] = field(default_factory=lambda: [16, 32])
    head_init: str = "uniform"
    bn_momentum: float = 0.9


@dataclass
class BayesConfig:
    means: list[list[float]] = field(default_factory=lambda: [[-1.0, 0.0], [1.0, 0.0]])
    covariance: list[list[float]] = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    imbalance: list[int] = field(default_factory=lambda: [1000, 20])
    n_seeds: int = 10
    universum: str = "conditional"
    grid_resolution: int = 200
    epochs: int = 20
    learning_rate: float = 0.1
    lr_milestones: list[int] = field(default_factory=lambda: [10, 15])


@dataclass
class RunConfig:
    method: str = "cauirl"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    universum: UniversumConfig = field(default_factory=UniversumConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bayes: BayesConfig = field(default_factory=BayesConfig)
    epoch_len: int | None = None
    rebalance_epochs: int | None = None
    augment: bool = False
    crop_pad: int = 1
    flip: bool = False
    n_groups: int = 5
    c2g: bool = True
    save_checkpoint: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "cauirl_external" and not self.universum.external_pool:
            raise ParameterError("method cauirl_external needs universum.external_pool")
        if self.method != "cauirl_external" and self.universum.external_pool:
            raise ParameterError("universum.external_pool is only valid with method cauirl_external")
        if not self.seeds:
            raise ParameterError("at least one seed is required")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict | None, where: str):
    data = dict(data or {})
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ParameterError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        nested = _NESTED.get((cls, name))
        if nested is not None:
            kwargs[name] = _build(nested, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ParameterError(f"bad config section {where or 'root'}: {exc}") from exc


_NESTED = {
    (RunConfig, "dataset"): DatasetConfig,
    (RunConfig, "universum"): UniversumConfig,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "bayes"): BayesConfig,
}


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path: str | os.PathLike | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read YAML (if given) and apply dotted-key overrides such as ``universum.lam``."""
    data: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ParameterError(f"config file {p} not found")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ParameterError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ParameterError(f"{p}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        set_dotted(data, key, value)
    return from_dict(data)


def set_dotted(data: dict, key: str, value) -> None:
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def resolve_data_path(path: str) -> Path:
    """Absolute/existing paths are used as-is; otherwise resolved under $CAUIRL_DATA_DIR."""
    p = Path(path) if path else Path()
    if path and (p.is_absolute() or p.exists()):
        return p
    root = os.environ.get(DATA_ENV)
    if root:
        return Path(root) / p
    return p
