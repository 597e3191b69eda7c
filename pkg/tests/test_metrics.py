import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cauirl.errors import CoverageError, ParameterError
from cauirl.metrics import (
    c2g,
    group_accuracy,
    kmeans,
    kmeans_silhouette,
    partition_groups,
    read_csv,
    silhouette,
    spearman,
    top1_accuracy,
)


def two_class_features(seed=0, n=40, d=3):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    return rng.standard_normal((n, d)), labels


def test_c2g_identical_inputs_is_zero():
    x, y = two_class_features()
    rep = c2g(x, y, x, y)
    assert np.all(rep.per_class_gap == 0.0) and rep.mean_gap == 0.0


def test_c2g_three_four_five():
    a = np.array([[1.0, 1.0], [-1.0, -1.0], [7.0, 7.0]])
    b = np.array([[3.0, 4.0], [3.0, 4.0], [7.0, 7.0]])
    rep = c2g(a, [0, 0, 1], b, [0, 0, 1])
    np.testing.assert_allclose(rep.per_class_gap, [5.0, 0.0], rtol=0, atol=1e-12)
    assert rep.mean_gap == pytest.approx(2.5)
    assert rep.per_class_gap.shape == (2,)


def test_c2g_coverage_error_names_class():
    x, y = two_class_features()
    with pytest.raises(CoverageError, match="class 2"):
        c2g(x, y, x, y, num_classes=3)


def test_c2g_cityblock_option():
    rep = c2g([[0.0, 0.0]], [0], [[3.0, 4.0]], [0], distance_kind="cityblock")
    assert rep.per_class_gap[0] == 7.0
    with pytest.raises(ParameterError):
        c2g([[0.0]], [0], [[0.0]], [0], distance_kind="cosine")


feature_sets = st.integers(3, 30).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, (n, 3), elements=st.floats(-50, 50, allow_nan=False)),
        st.permutations(list(range(n))).map(lambda p: np.array(p) % 3),
    )
)


@settings(max_examples=60, deadline=None)
@given(a=feature_sets, b=feature_sets)
def test_c2g_symmetric(a, b):
    (fa, la), (fb, lb) = a, b
    ab, ba = c2g(fa, la, fb, lb, num_classes=3), c2g(fb, lb, fa, la, num_classes=3)
    assert ab.per_class_gap.tobytes() == ba.per_class_gap.tobytes()


@settings(max_examples=60, deadline=None)
@given(a=feature_sets, b=feature_sets, alpha=st.floats(0.01, 100))
def test_c2g_positive_homogeneity(a, b, alpha):
    (fa, la), (fb, lb) = a, b
    base = c2g(fa, la, fb, lb, num_classes=3).per_class_gap
    scaled = c2g(alpha * fa, la, alpha * fb, lb, num_classes=3).per_class_gap
    np.testing.assert_allclose(scaled, alpha * base, rtol=1e-9, atol=1e-9)


def naive_gaps(fa, la, fb, lb, c):
    gaps = []
    for k in range(c):
        ma = [0.0] * fa.shape[1]
        mb = [0.0] * fb.shape[1]
        na = nb = 0
        for row, lab in zip(fa.tolist(), la.tolist()):
            if lab == k:
                ma = [s + v for s, v in zip(ma, row)]
                na += 1
        for row, lab in zip(fb.tolist(), lb.tolist()):
            if lab == k:
                mb = [s + v for s, v in zip(mb, row)]
                nb += 1
        gaps.append(math.sqrt(sum((p / na - q / nb) ** 2 for p, q in zip(ma, mb))))
    return gaps


@pytest.mark.parametrize("seed", range(5))
def test_c2g_matches_naive_summation(seed):
    rng = np.random.default_rng(seed)
    n_a, n_b = rng.integers(10, 100, size=2)
    fa, fb = rng.standard_normal((n_a, 4)), rng.standard_normal((n_b, 4)) + 0.5
    la, lb = np.arange(n_a) % 4, np.arange(n_b) % 4
    rep = c2g(fa, la, fb, lb)
    np.testing.assert_allclose(rep.per_class_gap, naive_gaps(fa, la, fb, lb, 4), rtol=0, atol=1e-12)


def test_c2g_report_files(tmp_path):
    x, y = two_class_features()
    c2g(x, y, x + 1, y).write(tmp_path / "g.csv", tmp_path / "g.json", {"seed": 3})
    rows = read_csv(tmp_path / "g.csv")
    assert [r["class_index"] for r in rows] == ["0", "1"]
    assert float(rows[0]["gap"]) == pytest.approx(math.sqrt(3))
    assert (tmp_path / "g.csv").read_text().startswith("# seed: 3\n")


# ---------------------------------------------------------------------------
# accuracy


def test_top1_cases():
    labels = np.repeat(np.arange(10), 3)
    assert top1_accuracy(labels, labels)[0] == 1.0
    overall, per = top1_accuracy(np.zeros(30, dtype=int), labels)
    assert overall == pytest.approx(0.1)
    assert per[0] == 1.0 and np.all(per[1:] == 0.0)
    assert top1_accuracy([0, 1, 2, 0], [0, 1, 2, 3])[0] == 0.75
    _, per = top1_accuracy([0, 0], [0, 0], num_classes=3)
    assert np.isnan(per[1]) and np.isnan(per[2])
    with pytest.raises(ParameterError):
        top1_accuracy([], [])


def test_overall_is_sample_weighted_per_class():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, 200)
    preds = np.where(rng.random(200) < 0.6, labels, rng.integers(0, 4, 200))
    overall, per = top1_accuracy(preds, labels)
    counts = np.bincount(labels)
    assert overall == pytest.approx(float(np.dot(per, counts) / counts.sum()), abs=1e-12)


def test_group_accuracy_hand_partition():
    counts = [5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50]
    rep = group_accuracy(np.arange(10) / 10, counts, 5)
    assert rep.groups == [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]
    np.testing.assert_allclose(rep.group_accuracy, [0.05, 0.25, 0.45, 0.65, 0.85], rtol=0, atol=1e-12)


def test_group_accuracy_descending_order_values():
    # sizes descend with index, so Group 1 holds the largest classes 0 and 1
    counts = np.arange(10, 0, -1) * 10
    rep = group_accuracy(np.arange(10)[::-1] / 10, counts, 5)
    np.testing.assert_allclose(rep.group_accuracy, [0.85, 0.65, 0.45, 0.25, 0.05], rtol=0, atol=1e-12)


def test_group_accuracy_uniform_and_uneven():
    assert group_accuracy([0.3] * 10, range(10), 5).group_accuracy == pytest.approx([0.3] * 5)
    assert [len(g) for g in partition_groups(range(7), 3)] == [3, 2, 2]
    with pytest.raises(ParameterError):
        partition_groups(range(3), 4)


@settings(max_examples=40, deadline=None)
@given(acc=arrays(np.float64, 10, elements=st.floats(0, 1)), data=st.data())
def test_group_accuracy_within_group_permutation_invariant(acc, data):
    counts = np.array([100, 90, 80, 70, 60, 50, 40, 30, 20, 10])
    base = group_accuracy(acc, counts, 5)
    perm = acc.copy()
    g = data.draw(st.integers(0, 4))
    perm[[2 * g, 2 * g + 1]] = perm[[2 * g + 1, 2 * g]]
    assert group_accuracy(perm, counts, 5).group_accuracy == base.group_accuracy


# ---------------------------------------------------------------------------
# clustering


def brute_silhouette(x, labels):
    x = x.tolist()
    n = len(x)
    scores = []
    for i in range(n):
        dists = {}
        for j in range(n):
            if j != i:
                d = math.dist(x[i], x[j])
                dists.setdefault(labels[j], []).append(d)
        own = dists.get(labels[i], [])
        if not own:
            scores.append(0.0)
            continue
        a = sum(own) / len(own)
        b = min(sum(v) / len(v) for k, v in dists.items() if k != labels[i])
        scores.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return sum(scores) / n


def blobs(seed=0, n=60):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(0, 0.1, (n, 2)), rng.normal(10, 0.1, (n, 2))])


def test_separated_blobs_silhouette():
    x = blobs()
    assign, s = kmeans_silhouette(x, 2, seed=0)
    assert s >= 0.9
    assert len(set(assign[:60])) == 1 and len(set(assign[60:])) == 1
    assert s == pytest.approx(brute_silhouette(x, assign.tolist()), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_silhouette_matches_oracle_on_messy_data(seed):
    from sklearn.metrics import silhouette_score

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((80, 3))
    assign, s = kmeans_silhouette(x, 3, seed=seed)
    assert s == pytest.approx(brute_silhouette(x, assign.tolist()), abs=1e-12)
    assert s == pytest.approx(silhouette_score(x, assign), abs=1e-12)


def test_silhouette_degenerate_conventions():
    same = np.ones((6, 2))
    assert kmeans_silhouette(same, 2, seed=0)[1] == 0.0
    x = np.arange(5.0)[:, None]
    assign, s = kmeans_silhouette(x, 5, seed=0)
    assert sorted(assign.tolist()) == [0, 1, 2, 3, 4] and s == 0.0
    assert silhouette(x, np.zeros(5)) == 0.0


def test_kmeans_deterministic_and_errors():
    x = blobs(1)
    a1, c1 = kmeans(x, 3, seed=4)
    a2, c2 = kmeans(x, 3, seed=4)
    assert a1.tobytes() == a2.tobytes() and c1.tobytes() == c2.tobytes()
    with pytest.raises(ParameterError):
        kmeans(x, 1)
    with pytest.raises(ParameterError):
        kmeans(x[:2], 3)


def test_spearman_monotone():
    assert spearman([0, 1, 2, 3], [0.1, 0.5, 0.7, 3.0]) == pytest.approx(1.0)
    assert spearman([0, 1, 2, 3], [4, 3, 2, 1]) == pytest.approx(-1.0)
