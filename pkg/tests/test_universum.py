import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cauirl.data import LabeledDataset
from cauirl.errors import CapacityError, ParameterError
from cauirl.universum import (
    HoMuConfig,
    batch_source,
    external_universum,
    homu,
    homu_same_class,
    mixup_pair,
    same_class_source,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
batches = st.integers(1, 12).flatmap(
    lambda n: st.integers(1, 6).flatmap(lambda d: arrays(np.float64, (n, d), elements=unit))
)


def test_homu_hand_value():
    out = homu(np.array([[0.0, 0.0], [1.0, 1.0]]), 1, 0.5)
    np.testing.assert_allclose(out, [0.75, 0.75], rtol=0, atol=1e-12)


def test_homu_identities():
    rng = np.random.default_rng(0)
    b = rng.random((5, 3))
    np.testing.assert_array_equal(homu(b, 2, 1.0), b[2])
    same = np.tile(rng.random(3), (4, 1))
    for lam in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(homu(same, 1, lam), same[0], rtol=0, atol=1e-12)


def test_homu_exclude_self_option():
    b = np.array([[0.0], [2.0], [4.0]])
    assert homu(b, 0, 0.0)[0] == pytest.approx(2.0)
    assert homu(b, 0, 0.0, exclude_self=True)[0] == pytest.approx(3.0)


def test_homu_errors():
    with pytest.raises(ParameterError):
        homu(np.zeros((0, 2)), 0, 0.5)
    with pytest.raises(ParameterError):
        homu(np.zeros((2, 2)), 2, 0.5)
    with pytest.raises(ParameterError):
        homu(np.zeros((2, 2)), 0, 1.5)
    with pytest.raises(ParameterError):
        HoMuConfig(lam=-0.1)


@settings(max_examples=80, deadline=None)
@given(b=batches, lam=unit)
def test_homu_preserves_batch_mean(b, lam):
    mixed = np.array([homu(b, i, lam) for i in range(b.shape[0])])
    np.testing.assert_allclose(mixed.mean(axis=0), b.mean(axis=0), rtol=0, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(b=batches, lam=unit, data=st.data())
def test_homu_is_convex(b, lam, data):
    i = data.draw(st.integers(0, b.shape[0] - 1))
    out = homu(b, i, lam)
    assert np.all(out >= b.min(axis=0) - 1e-12)
    assert np.all(out <= b.max(axis=0) + 1e-12)


@settings(max_examples=40, deadline=None)
@given(b=batches, data=st.data())
def test_homu_affine_in_lambda(b, data):
    i = data.draw(st.integers(0, b.shape[0] - 1))
    lams = np.linspace(0, 1, 6)
    outs = np.array([homu(b, i, lam) for lam in lams])
    steps = np.diff(outs, axis=0)
    np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape), rtol=0, atol=1e-12)


def test_same_class_cases():
    a, b = np.array([0.2, 0.4]), np.array([0.6, 0.0])
    np.testing.assert_allclose(homu_same_class(np.array([a, b]), 0, 0.0), (a + b) / 2)
    for lam in (0.0, 0.5, 1.0):
        np.testing.assert_allclose(homu_same_class(a[None, :], 0, lam), a)
    with pytest.raises(ParameterError):
        homu_same_class(np.zeros((0, 2)), 0, 0.5)


@settings(max_examples=40, deadline=None)
@given(b=batches, noise=arrays(np.float64, (12, 6), elements=unit), lam=unit, data=st.data())
def test_same_class_ignores_other_classes(b, noise, lam, data):
    n = b.shape[0]
    labels = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)))
    i = data.draw(st.integers(0, n - 1))
    src = same_class_source(lam)
    before = src(b, labels, i, None)
    other = labels != labels[i]
    b2 = b.copy()
    b2[other] = noise[:n, : b.shape[1]][other]
    np.testing.assert_array_equal(src(b2, labels, i, None), before)


def test_batch_source_uses_full_batch_mean():
    b = np.array([[0.0], [1.0], [5.0]])
    out = batch_source(0.5)(b, np.array([0, 1, 1]), 0, None)
    assert out[0] == pytest.approx(0.5 * 2.0)


def test_mixup_pair():
    xi, xj = np.array([0.0, 2.0]), np.array([2.0, 0.0])
    np.testing.assert_allclose(mixup_pair(xi, xj, 0.25), [1.5, 0.5])
    np.testing.assert_array_equal(mixup_pair(xi, xj, 1.0), xi)
    np.testing.assert_array_equal(mixup_pair(xi, xj, 0.0), xj)
    with pytest.raises(ParameterError):
        mixup_pair(xi, np.zeros(3), 0.5)


def pool():
    return LabeledDataset(np.array([[0.1], [0.2], [0.3], [0.4]]), [0, 1, 1, 2], (1,), 4)


def test_external_single_sample_and_determinism():
    p = pool()
    assert external_universum(p, 0, seed=1)[0] == pytest.approx(0.1)
    assert external_universum(p, 2, seed=99)[0] == pytest.approx(0.4)
    assert external_universum(p, 1, seed=5)[0] == external_universum(p, 1, seed=5)[0]
    with pytest.raises(CapacityError):
        external_universum(p, 3, seed=0)


def test_external_draws_binomial_bound():
    p = pool()
    rng = np.random.default_rng(0)
    draws = [external_universum(p, 1, rng)[0] for _ in range(1000)]
    hits = sum(1 for d in draws if d == pytest.approx(0.2))
    assert abs(hits - 500) <= 3 * math.sqrt(250)
