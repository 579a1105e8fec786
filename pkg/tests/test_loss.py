import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcfbc.loss import (FocalParams, cross_entropy, focal_loss, loss_backward, softmax,
                        softmax_logits)


def random_probs(n, seed=0):
    p = np.random.default_rng(seed).uniform(1e-6, 1 - 1e-6, n)
    return np.stack([1 - p, p], axis=1)


def test_softmax_examples():
    assert np.allclose(softmax_logits(np.ones((1, 3)), np.zeros((3, 2)), np.zeros(2)), 0.5)
    for L in (-50.0, 0.0, 700.0):
        assert np.allclose(softmax(np.array([[L, L]])), 0.5)
    e2 = np.exp(2.0)
    assert np.allclose(softmax(np.array([2.0, 0.0])), [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-15)


def test_focal_examples():
    assert focal_loss(np.array([0.0, 1.0]), 1) == 0.0
    assert focal_loss(np.array([0.5, 0.5]), 1) == pytest.approx(0.5 * np.log(2), abs=1e-12)
    assert focal_loss(np.array([0.5, 0.5]), 1) == pytest.approx(0.34657, abs=1e-5)


def test_gamma_zero_is_cross_entropy():
    probs = random_probs(1000)
    labels = np.random.default_rng(1).integers(0, 2, 1000)
    fl = focal_loss(probs, labels, FocalParams(1.0, 0.0))
    assert np.max(np.abs(fl - cross_entropy(probs, labels))) <= 1e-12


def test_gamma_one_ratio():
    probs = random_probs(1000, seed=2)
    labels = np.random.default_rng(3).integers(0, 2, 1000)
    pt = probs[np.arange(1000), labels]
    ratio = focal_loss(probs, labels, FocalParams(1.0, 1.0)) / cross_entropy(probs, labels)
    assert np.max(np.abs(ratio - (1 - pt))) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6), st.floats(0, 4))
def test_nonnegative_and_decreasing(p1, p2, gamma):
    lo, hi = sorted((p1, p2))
    fp = FocalParams(1.0, gamma)
    a = focal_loss(np.array([1 - lo, lo]), 1, fp)
    b = focal_loss(np.array([1 - hi, hi]), 1, fp)
    assert a >= 0 and b >= 0
    if hi - lo > 1e-6:
        assert a > b


def test_clamp_recorded():
    loss, n = focal_loss(np.array([[1.0, 0.0]]), np.array([1]), return_clamped=True)
    assert np.isfinite(loss).all() and n == 1


def _loss_of_logits(logit, label, fp):
    return focal_loss(softmax(logit), label, fp)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0, 0.5])
def test_backward_finite_differences(gamma):
    rng = np.random.default_rng(4)
    fp = FocalParams(0.7, gamma)
    for label in (0, 1):
        logit = rng.standard_normal(2)
        g = loss_backward(softmax(logit), label, fp)[0]
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            num = (_loss_of_logits(logit + e, label, fp) - _loss_of_logits(logit - e, label, fp)) / (2 * h)
            assert g[i] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_backward_limits():
    probs = random_probs(5)
    labels = np.array([0, 1, 1, 0, 1])
    onehot = np.eye(2)[labels]
    assert np.allclose(loss_backward(probs, labels, FocalParams(1.0, 0.0)), probs - onehot)
    assert np.allclose(loss_backward(np.array([[0.0, 1.0]]), np.array([1])), 0.0)
