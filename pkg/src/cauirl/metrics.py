"""Class-gap (C2G) measurement, accuracy reports, and k-means separability."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageError, ParameterError

DISTANCES = {
    "euclidean": lambda a, b: float(np.sqrt(np.sum((a - b) ** 2))),
    "cityblock": lambda a, b: float(np.sum(np.abs(a - b))),
}


@dataclass
class C2GReport:
    per_class_gap: np.ndarray
    mean_gap: float
    distance_kind: str
    class_means_a: np.ndarray
    class_means_b: np.ndarray

    def to_dict(self) -> dict:
        return {
            "per_class_gap": self.per_class_gap.tolist(),
            "mean_gap": self.mean_gap,
            "distance_kind": self.distance_kind,
            "class_means_a": self.class_means_a.tolist(),
            "class_means_b": self.class_means_b.tolist(),
        }

    def write(self, csv_path, json_path=None, header: dict | None = None) -> None:
        write_csv(
            csv_path,
            ["class_index", "gap"],
            [[c, repr(float(g))] for c, g in enumerate(self.per_class_gap)],
            header,
        )
        if json_path is not None:
            Path(json_path).write_text(json.dumps({**(header or {}), **self.to_dict()}, indent=2))


def class_means(features: np.ndarray, labels: np.ndarray, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    sums = np.zeros((num_classes, features.shape[1]))
    np.add.at(sums, labels, features)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts


def c2g(features_a, labels_a, features_b, labels_b, distance_kind: str = "euclidean",
        num_classes: int | None = None) -> C2GReport:
    """Per-class distance between class feature means of two datasets."""
    if distance_kind not in DISTANCES:
        raise ParameterError(f"unknown distance {distance_kind!r}; expected one of {sorted(DISTANCES)}")
    features_a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    features_b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if features_a.shape[1] != features_b.shape[1]:
        raise ParameterError(f"feature widths differ: {features_a.shape[1]} vs {features_b.shape[1]}")
    labels_a = np.asarray(labels_a, dtype=np.int64)
    labels_b = np.asarray(labels_b, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(labels_a.max(initial=-1), labels_b.max(initial=-1))) + 1
    mean_a, count_a = class_means(features_a, labels_a, num_classes)
    mean_b, count_b = class_means(features_b, labels_b, num_classes)
    for c in range(num_classes):
        if count_a[c] == 0 or count_b[c] == 0:
            side = "first" if count_a[c] == 0 else "second"
            raise CoverageError(f"class {c} has no samples in the {side} dataset")
    dist = DISTANCES[distance_kind]
    gaps = np.array([dist(mean_a[c], mean_b[c]) for c in range(num_classes)])
    return C2GReport(gaps, float(gaps.mean()), distance_kind, mean_a, mean_b)


def top1_accuracy(predictions, labels, num_classes: int | None = None):
    """Overall accuracy and per-class accuracy (NaN for classes absent from ``labels``)."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ParameterError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise ParameterError("accuracy of an empty prediction set is undefined")
    if num_classes is None:
        num_classes = int(max(labels.max(), predictions.max())) + 1
    correct = predictions == labels
    counts = np.bincount(labels, minlength=num_classes)
    hits = np.bincount(labels, weights=correct, minlength=num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return float(correct.mean()), per_class


@dataclass
class GroupAccuracyReport:
    groups: list[list[int]]
    group_accuracy: list[float]
    overall: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def partition_groups(train_counts, n_groups: int) -> list[list[int]]:
    """Classes by descending train count (ties by index), cut into near-equal groups.

    When ``n_groups`` does not divide the class count, earlier groups get one extra class.
    """
    counts = np.asarray(train_counts)
    c = counts.shape[0]
    if not 1 <= n_groups <= c:
        raise ParameterError(f"cannot split {c} classes into {n_groups} groups")
    order = sorted(range(c), key=lambda k: (-counts[k], k))
    base, extra = divmod(c, n_groups)
    groups, start = [], 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        groups.append(order[start:start + size])
        start += size
    return groups


def group_accuracy(per_class_acc, train_counts, n_groups: int = 5, overall: float | None = None) -> GroupAccuracyReport:
    acc = np.asarray(per_class_acc, dtype=np.float64)
    groups = partition_groups(train_counts, n_groups)
    means = [float(np.mean(acc[g])) for g in groups]
    return GroupAccuracyReport(groups, means, overall)


# ---------------------------------------------------------------------------
# k-means + silhouette


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x**2).sum(1)[:, None] - 2.0 * x @ centers.T + (centers**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(features, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding. Returns (assignments, centers)."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if k < 2 or n < k:
        raise ParameterError(f"k-means needs k >= 2 and at least k rows (k={k}, rows={n})")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        idx = rng.choice(n, p=closest / total) if total > 0 else int(rng.integers(n))
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[j:j + 1])[:, 0])

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        assign = d.argmin(axis=1)
        new = centers.copy()
        taken = np.zeros(n, dtype=bool)
        for j in range(k):
            members = assign == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                far = d[np.arange(n), assign]
                far = np.where(taken, -1.0, far)
                i = int(far.argmax())
                taken[i] = True
                new[j] = x[i]
                assign[i] = j
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift <= tol:
            break
    assign = _sq_dists(x, centers).argmin(axis=1)
    return assign, centers


def silhouette(features, assignments) -> float:
    """Mean silhouette with Euclidean distances.

    Points in singleton clusters, and points with a = b = 0, score 0; fewer than
    two clusters gives 0.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(assignments)
    uniq, labels = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        return 0.0
    from scipy.spatial.distance import cdist

    dist = cdist(x, x)
    n = x.shape[0]
    sizes = np.bincount(labels)
    sums = np.zeros((n, uniq.size))
    np.add.at(sums.T, labels, dist)
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    other = sums / sizes[None, :]
    other[np.arange(n), labels] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where((own > 1) & (denom > 0), (b - a) / denom, 0.0)
    return float(s.mean())


def kmeans_silhouette(features, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
    assign, _ = kmeans(features, k, seed, max_iter, tol)
    return assign, silhouette(features, assign)


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y).statistic)


def write_csv(path, columns, rows, header: dict | None = None) -> None:
    """CSV with optional ``# key: json`` provenance lines ahead of the column row."""
    with open(path, "w", newline="") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
