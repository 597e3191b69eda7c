"""Bayes-consistency harness on two-Gaussian tasks and per-class gradient diagnostics.

The consistency check trains softmax-linear classifiers on (a) a balanced
sample, (b) an imbalanced sample pushed through the re-balancing pipeline
(over-sampling + class-aware Universum replacement) and (c) the same
imbalanced sample with plain ERM, then compares their decisions on a dense
grid.  The default Universum draws from the true class conditional, so
train and Universum conditionals coincide exactly; ``universum="homu"``
swaps in higher-order mixup to see how far the generated data departs from
that ideal.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import GaussianTask, LabeledDataset, sample_gaussian_task
from .errors import DecompositionError, DegenerateClassError, ParameterError
from .model.network import Model, TrainConfig, build_model, loss_and_backward
from .sampling import Batch
from .training import PipelineConfig, derive_seed, fit

_DATA = 10


def analytic_bayes_boundary(task: GaussianTask, priors=None) -> tuple[np.ndarray, float]:
    """Closed-form two-class boundary ``w @ x + bias = 0`` (class 1 where positive)."""
    if task.num_classes != 2:
        raise ParameterError(f"analytic boundary is two-class only, task has {task.num_classes}")
    priors = task.test_priors if priors is None else np.asarray(priors, dtype=np.float64)
    task.cholesky()
    try:
        inv = np.linalg.inv(task.class_covariance)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"singular covariance: {exc}") from exc
    m0, m1 = task.class_means
    w = inv @ (m1 - m0)
    bias = -0.5 * (m1 @ inv @ m1 - m0 @ inv @ m0) + math.log(priors[1] / priors[0])
    return w, float(bias)


def linear_boundary(model: Model) -> tuple[np.ndarray, float]:
    """Two-class boundary of a softmax-linear model (identity extractor)."""
    if model.architecture["kind"] != "identity" or model.architecture["num_classes"] != 2:
        raise ParameterError("boundary extraction needs a two-class identity-feature model")
    W, b = model.head.params["W"], model.head.params["b"]
    return (W[:, 1] - W[:, 0]).astype(np.float64), float(b[1] - b[0])


def decision_grid(task: GaussianTask, resolution: int = 200, width: float = 4.0) -> np.ndarray:
    """Regular grid over mean-of-means +/- ``width`` standard deviations per axis."""
    if task.dim != 2:
        raise ParameterError("decision grids are defined for two-dimensional tasks")
    center = task.class_means.mean(axis=0)
    sd = np.sqrt(np.diag(task.class_covariance))
    axes = [np.linspace(center[k] - width * sd[k], center[k] + width * sd[k], resolution) for k in range(2)]
    gx, gy = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def decisions(boundary, grid) -> np.ndarray:
    w, bias = boundary
    return grid @ w + bias > 0


def agreement(a, b, grid) -> float:
    return float(np.mean(decisions(a, grid) == decisions(b, grid)))


def angle_between(a, b) -> float:
    """Angle in degrees between two boundary lines, in [0, 90]."""
    wa, wb = np.asarray(a[0]), np.asarray(b[0])
    cos = abs(wa @ wb) / (np.linalg.norm(wa) * np.linalg.norm(wb))
    return float(np.degrees(np.arccos(np.clip(cos, 0.0, 1.0))))


def conditional_source(task: GaussianTask):
    """Universum drawn from the exact class conditional of the target label."""
    chol = task.cholesky()
    means = task.class_means

    def source(samples, labels, i, rng):
        return means[labels[i]] + chol @ rng.standard_normal(task.dim)

    return source


@dataclass
class BayesCheckResult:
    seeds: list[int]
    boundary_params_analytic: list[float]
    boundary_params_balanced: list[list[float]]
    boundary_params_rebalanced: list[list[float]]
    boundary_params_erm: list[list[float]]
    agreement_rebalanced: list[float]
    agreement_erm: list[float]
    agreement_balanced_vs_analytic: list[float]
    agreement_rebalanced_vs_analytic: list[float]
    agreement_erm_vs_analytic: list[float]
    angle_deviation_balanced: list[float]
    angle_deviation_rebalanced: list[float]
    angle_deviation_erm: list[float]
    self_agreement: list[float] = field(default_factory=list)
    self_agreement_p5: float = float("nan")
    settings: dict = field(default_factory=dict)

    @property
    def agreement_rate(self) -> float:
        return float(np.mean(self.agreement_rebalanced))

    @property
    def angle_deviation(self) -> float:
        return float(np.mean(self.angle_deviation_rebalanced))

    @property
    def passes_self_agreement_bar(self) -> bool:
        return self.agreement_rate >= self.self_agreement_p5

    @property
    def beats_erm_every_seed(self) -> bool:
        return all(r > e for r, e in zip(self.agreement_rebalanced, self.agreement_erm))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(
            agreement_rate=self.agreement_rate,
            angle_deviation=self.angle_deviation,
            passes_self_agreement_bar=self.passes_self_agreement_bar,
            beats_erm_every_seed=self.beats_erm_every_seed,
        )
        return out


def _train_linear(data: LabeledDataset, pipeline: PipelineConfig, config: TrainConfig, seed: int, source=None):
    model = build_model(
        {"kind": "identity", "input_shape": list(data.shape), "num_classes": 2, "head_init": "zero"}, seed
    )
    fit(model, data, None, pipeline, config, seed=seed, universum_source=source)
    return linear_boundary(model)


def run_bayes_consistency_check(
    task: GaussianTask,
    imbalance=(1000, 20),
    pipeline: PipelineConfig | None = None,
    config: TrainConfig | None = None,
    n_seeds: int = 10,
    balanced_count: int | None = None,
    universum: str = "conditional",
    grid_resolution: int = 200,
    seeds=None,
) -> BayesCheckResult:
    """Train balanced / re-balanced / ERM linear classifiers per seed and compare decisions.

    The imbalanced sample is a per-class prefix of the balanced sample drawn
    with the same seed, so equal counts with ``delta=0`` reproduce the
    balanced run exactly.  The pass bar is the 5th percentile of pairwise
    agreement between balanced runs of different seeds.
    """
    if task.num_classes != 2:
        raise ParameterError("the consistency check is two-class only")
    config = config or TrainConfig(epochs=20, batch_size=128, learning_rate=0.1, lr_milestones=(10, 15),
                                   weight_decay=0.0)
    pipeline = pipeline or PipelineConfig(method="cauirl", delta=0.9, defer_epochs=config.epochs)
    if pipeline.method not in ("cauirl", "cauirl_sc", "mixup_universum"):
        raise ParameterError(f"re-balanced run needs a Universum method, got {pipeline.method!r}")
    n_bal = balanced_count or max(imbalance)
    seeds = list(range(n_seeds)) if seeds is None else list(seeds)
    grid = decision_grid(task, grid_resolution)
    analytic = analytic_bayes_boundary(task, task.test_priors)

    balanced_pipe = PipelineConfig(method="oversample", epoch_len=pipeline.epoch_len)
    erm_pipe = PipelineConfig(method="erm", epoch_len=pipeline.epoch_len)
    source = conditional_source(task) if universum == "conditional" else None
    if universum not in ("conditional", "homu"):
        raise ParameterError(f"universum must be 'conditional' or 'homu', got {universum!r}")

    rows = {k: [] for k in ("bal", "re", "erm")}
    for s in seeds:
        data_seed = derive_seed(s, _DATA)
        balanced = sample_gaussian_task(task, [n_bal, n_bal], data_seed)
        imbalanced = sample_gaussian_task(task, list(imbalance), data_seed)
        rows["bal"].append(_train_linear(balanced, balanced_pipe, config, s))
        rows["re"].append(_train_linear(imbalanced, pipeline, config, s, source))
        rows["erm"].append(_train_linear(imbalanced, erm_pipe, config, s))

    self_agree = [
        agreement(rows["bal"][i], rows["bal"][j], grid)
        for i in range(len(seeds)) for j in range(i + 1, len(seeds))
    ]

    def params(b):
        return [*map(float, b[0]), b[1]]

    return BayesCheckResult(
        seeds=seeds,
        boundary_params_analytic=params(analytic),
        boundary_params_balanced=[params(b) for b in rows["bal"]],
        boundary_params_rebalanced=[params(b) for b in rows["re"]],
        boundary_params_erm=[params(b) for b in rows["erm"]],
        agreement_rebalanced=[agreement(r, b, grid) for r, b in zip(rows["re"], rows["bal"])],
        agreement_erm=[agreement(e, b, grid) for e, b in zip(rows["erm"], rows["bal"])],
        agreement_balanced_vs_analytic=[agreement(b, analytic, grid) for b in rows["bal"]],
        agreement_rebalanced_vs_analytic=[agreement(b, analytic, grid) for b in rows["re"]],
        agreement_erm_vs_analytic=[agreement(b, analytic, grid) for b in rows["erm"]],
        angle_deviation_balanced=[angle_between(b, analytic) for b in rows["bal"]],
        angle_deviation_rebalanced=[angle_between(b, analytic) for b in rows["re"]],
        angle_deviation_erm=[angle_between(b, analytic) for b in rows["erm"]],
        self_agreement=self_agree,
        self_agreement_p5=float(np.percentile(self_agree, 5)) if self_agree else float("nan"),
        settings={
            "imbalance": list(imbalance),
            "balanced_count": n_bal,
            "universum": universum,
            "grid_resolution": grid_resolution,
            "pipeline": asdict(pipeline),
            "train": asdict(config),
        },
    )


# ---------------------------------------------------------------------------
# gradient decomposition


@dataclass
class GradientDecomposition:
    classes: list[int]
    counts: list[int]
    per_class_gradient: dict[int, np.ndarray]
    norms: dict[int, float]
    cosine: np.ndarray
    minority_majority_ratio: float
    full_gradient: np.ndarray

    def recomposed(self) -> np.ndarray:
        n = sum(self.counts)
        return sum(cnt / n * self.per_class_gradient[c] for c, cnt in zip(self.classes, self.counts))


def _head_vector(model: Model) -> np.ndarray:
    return np.concatenate([model.head.grads["W"].ravel(), model.head.grads["b"].ravel()]).astype(np.float64)


def gradient_decomposition(model: Model, batch: Batch, training: bool = False) -> GradientDecomposition:
    """Per-class mean cross-entropy gradients of the classifier head.

    Features come from one forward pass over the whole batch, so the
    class-count-weighted sum of the per-class gradients equals the batch
    gradient.  That batch gradient is taken from the model's own backward
    pass, independently of the per-class path.
    """
    labels = np.asarray(batch.labels, dtype=np.int64)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise DegenerateClassError("gradient decomposition needs at least two classes in the batch")
    z, logits, probs = model.forward(batch.samples, training, batch.universum_mask)
    z = z.astype(np.float64)
    resid = probs.astype(np.float64).copy()
    resid[np.arange(labels.shape[0]), labels] -= 1.0

    per_class, counts = {}, []
    for c in classes:
        rows = labels == c
        gW = z[rows].T @ resid[rows] / rows.sum()
        gb = resid[rows].mean(axis=0)
        per_class[c] = np.concatenate([gW.ravel(), gb])
        counts.append(int(rows.sum()))

    loss_and_backward(model, batch.samples, labels, batch.universum_mask, training)
    full = _head_vector(model)

    norms = {c: float(np.linalg.norm(g)) for c, g in per_class.items()}
    mat = np.array([per_class[c] for c in classes])
    lens = np.linalg.norm(mat, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = (mat @ mat.T) / np.outer(lens, lens)
    minority = classes[int(np.argmin(counts))]
    majority = classes[int(np.argmax(counts))]
    ratio = norms[minority] / norms[majority] if norms[majority] > 0 else float("inf")
    return GradientDecomposition(classes, counts, per_class, norms, cosine, ratio, full)
