"""Feature extractor + linear head, softmax cross-entropy, and SGD training step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArchitectureError, NumericError, ParameterError
from .layers import (
    Conv2d,
    DARBatchNorm,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2,
    ReLU,
    Reshape,
)

ARCHITECTURES = ("cnn", "mlp", "identity")
PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.05
    lr_milestones: tuple[int, ...] = (20, 26)
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    warmup_epochs: int = 0
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        if self.learning_rate < 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ParameterError("epochs, batch_size must be positive and learning_rate non-negative")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ParameterError(f"milestones must be strictly increasing: {self.lr_milestones}")
        if self.lr_milestones and self.lr_milestones[-1] >= self.epochs:
            raise ParameterError(f"milestones must be < epochs={self.epochs}")
        if self.precision not in ("double", "single"):
            raise ParameterError(f"precision must be 'double' or 'single', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """Linear warmup, then step decay by ``lr_gamma`` at each milestone passed."""
    if epoch < config.warmup_epochs:
        return config.learning_rate * (epoch + 1) / config.warmup_epochs
    passed = sum(1 for m in config.lr_milestones if epoch >= m)
    return config.learning_rate * config.lr_gamma**passed


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


class CrossEntropy:
    """Mean negative log-likelihood with its per-class decomposition.

    Probabilities below ``PROB_FLOOR`` are clamped; ``clamped`` counts how
    often that happened.
    """

    def __init__(self):
        self.clamped = 0

    def __call__(self, probabilities, labels, num_classes: int | None = None):
        probabilities = np.asarray(probabilities, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        c = probabilities.shape[1] if num_classes is None else num_classes
        p_true = probabilities[np.arange(labels.shape[0]), labels]
        low = p_true < PROB_FLOOR
        self.clamped += int(low.sum())
        nll = -np.log(np.where(low, PROB_FLOOR, p_true))
        counts = np.bincount(labels, minlength=c)
        sums = np.bincount(labels, weights=nll, minlength=c)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        return float(nll.mean()), per_class


cross_entropy = CrossEntropy()


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Model:
    """Sequential feature extractor ``layers`` followed by the linear ``head``."""

    def __init__(self, architecture: dict, layers: list[Layer], head: Linear):
        self.architecture = dict(architecture)
        self.layers = layers
        self.head = head
        self.dtype = np.float64

    @property
    def all_layers(self) -> list[Layer]:
        return [*self.layers, self.head]

    @property
    def feature_dim(self) -> int:
        return self.head.n_in

    @property
    def input_dim(self) -> int:
        return math.prod(self.architecture["input_shape"])

    def astype(self, dtype) -> "Model":
        self.dtype = dtype
        for layer in self.all_layers:
            layer.astype(dtype)
        return self

    def features(self, samples, training: bool = False, mask=None) -> np.ndarray:
        x = np.asarray(samples, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ArchitectureError(
                f"input rows of length {x.shape[-1] if x.ndim else 0} do not match input shape "
                f"{tuple(self.architecture['input_shape'])}"
            )
        for layer in self.layers:
            x = layer.forward(x, training, mask)
            _check_finite(x, f"layer {layer.name}")
        return x

    def forward(self, samples, training: bool = False, mask=None):
        z = self.features(samples, training, mask)
        logits = self.head.forward(z, training)
        _check_finite(logits, f"layer {self.head.name}")
        return z, logits, softmax(logits)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        g = self.head.backward(dlogits)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self):
        for layer in self.all_layers:
            for key in layer.params:
                yield layer, key

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.all_layers:
            for k, v in layer.params.items():
                out[f"{layer.name}.{k}"] = v
            for k, v in layer.buffers.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for layer in self.all_layers:
            for store in (layer.params, layer.buffers):
                for k in store:
                    key = f"{layer.name}.{k}"
                    if key not in arrays or arrays[key].shape != store[k].shape:
                        raise ArchitectureError(f"checkpoint tensor {key} missing or mis-shaped")
                    store[k] = np.array(arrays[key], dtype=self.dtype)

    def predict(self, samples, batch_size: int = 1024) -> np.ndarray:
        out = []
        for start in range(0, len(samples), batch_size):
            _, logits, _ = self.forward(samples[start:start + batch_size], training=False)
            out.append(logits.argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def build_model(architecture: dict, seed: int = 0) -> Model:
    """Build a model from its descriptor.

    Descriptor keys: ``kind`` (cnn | mlp | identity), ``input_shape``,
    ``num_classes``, ``widths`` and optionally ``head_init`` ("zero").
    """
    arch = {
        "kind": architecture.get("kind", "cnn"),
        "input_shape": [int(s) for s in architecture["input_shape"]],
        "num_classes": int(architecture["num_classes"]),
        "widths": [int(w) for w in architecture.get("widths", [])],
        "head_init": architecture.get("head_init", "uniform"),
        "bn_momentum": float(architecture.get("bn_momentum", 0.9)),
    }
    kind = arch["kind"]
    if kind not in ARCHITECTURES:
        raise ArchitectureError(f"unknown architecture {kind!r}; expected one of {ARCHITECTURES}")
    rng = np.random.default_rng(seed)
    shape = arch["input_shape"]
    mom = arch["bn_momentum"]
    layers: list[Layer] = []
    if kind == "identity":
        feat = math.prod(shape)
    elif kind == "mlp":
        feat = math.prod(shape)
        for i, w in enumerate(arch["widths"] or [64]):
            layers += [
                Linear(f"fc{i}", feat, w, rng),
                DARBatchNorm(f"bn{i}", w, momentum=mom),
                ReLU(f"relu{i}"),
            ]
            feat = w
    else:
        if len(shape) != 3:
            raise ArchitectureError(f"cnn needs a CxHxW input shape, got {shape}")
        c, h, w = shape
        layers.append(Reshape("reshape", shape))
        for s, width in enumerate(arch["widths"] or [16, 32]):
            for j in range(2):
                layers += [
                    Conv2d(f"conv{s}_{j}", c, width, 3, 1, rng),
                    DARBatchNorm(f"bn{s}_{j}", width, momentum=mom),
                    ReLU(f"relu{s}_{j}"),
                ]
                c = width
            if h % 2 or w % 2:
                raise ArchitectureError(f"stage {s}: spatial size {h}x{w} cannot be pooled")
            layers.append(MaxPool2(f"pool{s}"))
            h, w = h // 2, w // 2
        layers.append(GlobalAvgPool("gap"))
        feat = c
    head = Linear(
        "head", feat, arch["num_classes"], rng,
        zero_init=arch["head_init"] == "zero", gain=1.0,
    )
    return Model(arch, layers, head)


class SGD:
    """SGD with momentum and L2 weight decay: ``v = m*v + (g + wd*w); w -= lr*v``."""

    def __init__(self, model: Model, momentum: float = 0.9, weight_decay: float = 0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {
            (layer.name, k): np.zeros_like(layer.params[k]) for layer, k in model.parameters()
        }

    def step(self, lr: float) -> dict[str, float]:
        norms = {}
        for layer in self.model.all_layers:
            sq = 0.0
            for k, w in layer.params.items():
                g = layer.grads[k]
                if not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient in layer {layer.name} ({k})")
                sq += float(np.sum(g.astype(np.float64) ** 2))
                v = self.velocity[(layer.name, k)]
                v *= self.momentum
                v += g + self.weight_decay * w
                w -= lr * v
            if layer.params:
                norms[layer.name] = math.sqrt(sq)
        return norms


def loss_and_backward(model: Model, samples, labels, mask=None, training: bool = True):
    """Forward + backward of the mean cross-entropy; fills every layer's ``grads``."""
    labels = np.asarray(labels, dtype=np.int64)
    _, logits, probs = model.forward(samples, training, mask)
    logp = log_softmax(logits)
    n = labels.shape[0]
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    model.backward(dlogits / n)
    return loss, probs


def backward_and_step(model: Model, batch, optimizer: SGD, lr: float):
    """One SGD step on ``batch``; returns (loss, per-layer gradient L2 norms)."""
    loss, _ = loss_and_backward(model, batch.samples, batch.labels, batch.universum_mask, training=True)
    if not math.isfinite(loss):
        raise NumericError("non-finite training loss")
    norms = optimizer.step(lr)
    return loss, norms


def extract_features(model: Model, dataset, batch_size: int = 1024) -> np.ndarray:
    out = [
        model.features(dataset.samples[s:s + batch_size], training=False)
        for s in range(0, len(dataset), batch_size)
    ]
    if not out:
        return np.zeros((0, model.feature_dim))
    return np.concatenate(out).astype(np.float64)
