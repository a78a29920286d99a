import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sspitch.autodiff import ShapeError, Tensor, ops
from sspitch.losses import (
    ALPHA, loss_equiv, loss_invar, loss_sce, scalar_pitch, total_loss,
)

from conftest import leaf

K = 269


def one_hot(k, n=K, scale=60.0):
    """Logits whose softmax is one-hot at k to double precision."""
    y = np.full(n, -scale)
    y[k] = scale
    return y


def softmax(y):
    e = np.exp(y - y.max())
    return e / e.sum()


def entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def huber(x):
    return 0.5 * x * x if abs(x) <= 1 else abs(x) - 0.5


def test_scalar_pitch_examples():
    e = np.eye(K)
    assert float(scalar_pitch(e[0]).data) == 1.0
    assert float(scalar_pitch(e[36]).data) == pytest.approx(2.0, rel=1e-14)
    mpmath.mp.dps = 40
    a = mpmath.power(2, mpmath.mpf(1) / 36)
    oracle = sum(a ** k for k in range(K)) / K
    assert float(scalar_pitch(np.full(K, 1 / K)).data) == pytest.approx(float(oracle), rel=1e-13)
    assert float(oracle) == pytest.approx(float((a ** K - 1) / (K * (a - 1))), rel=1e-15)


def test_equiv_is_zero_for_exact_interior_shift():
    for k, d in [(100, 6), (144, -15), (30, 1)]:
        v = float(loss_equiv(one_hot(k), one_hot(k + d), d).data)
        assert v == pytest.approx(0.0, abs=1e-12)
    assert float(loss_equiv(one_hot(144), one_hot(144), 0).data) == pytest.approx(0, abs=1e-15)


def test_equiv_unshifted_pair_with_delta_six():
    mpmath.mp.dps = 30
    a6 = mpmath.power(2, mpmath.mpf(6) / 36)
    oracle = 0.5 * (huber(float(1 - a6)) + huber(float(1 - 1 / a6)))
    got = float(loss_equiv(one_hot(144), one_hot(144), 6).data)
    assert got == pytest.approx(oracle, rel=1e-10)


def test_equiv_zero_for_broad_non_wrapping_shift(rng):
    p = np.zeros(K)
    p[80:120] = rng.uniform(0.5, 1, 40)
    y = np.log(p + 1e-300)
    y2 = np.roll(y, 9)
    assert float(loss_equiv(y, y2, 9).data) == pytest.approx(0.0, abs=1e-10)


def test_invar_examples(rng):
    y = rng.normal(size=K)
    assert float(loss_invar(y, y).data) == pytest.approx(entropy(softmax(y)), rel=1e-12)
    u = np.zeros(K)
    assert float(loss_invar(u, u).data) == pytest.approx(np.log(K), rel=1e-14)
    assert round(float(loss_invar(u, u).data), 4) == 5.5947
    sharp = np.zeros(K)
    sharp[144] = 30.0
    assert float(loss_invar(sharp, sharp).data) == pytest.approx(entropy(softmax(sharp)), rel=1e-9)
    assert float(loss_invar(sharp, sharp).data) < 1e-9


def test_sce_examples(rng):
    y = rng.normal(size=K)
    assert float(loss_sce(y, np.roll(y, 5), 5).data) == pytest.approx(entropy(softmax(y)), rel=1e-12)
    u = np.full(K, 0.7)
    for d in (-15, 3, 11):
        assert float(loss_sce(u, u, d).data) == pytest.approx(np.log(K), rel=1e-14)
    ya, yb = 8 * np.eye(K)[144], 8 * np.eye(K)[150]
    right = float(loss_sce(ya, yb, 6).data)
    wrong = float(loss_sce(ya, yb, 3).data)
    assert right == pytest.approx(entropy(softmax(ya)), rel=1e-12)
    assert wrong > right


def test_sce_gradient_vanishes_at_uniform():
    y, y2 = leaf(np.zeros(K)), leaf(np.full(K, 3.0))
    loss_sce(y, y2, 7).backward()
    assert np.linalg.norm(y.grad) < 1e-12 and np.linalg.norm(y2.grad) < 1e-12


def test_total_loss_gating(rng):
    y, y2 = leaf(rng.normal(size=(2, K))), leaf(rng.normal(size=(2, K)))
    br = total_loss(y, y2, np.array([4, -2]), np.zeros(2))
    br.total.backward()
    assert float(br.total.data) == 0.0
    assert not np.any(y.grad) and not np.any(y2.grad)


def test_total_loss_single_and_half(rng):
    y, y2 = rng.normal(size=(2, K)), rng.normal(size=(2, K))
    d = np.array([5, -7])
    one = total_loss(y[:1], y2[:1], d[:1], [1.0])
    assert float(one.total.data) == pytest.approx(one.equiv[0] + one.invar[0] + one.sce[0])
    half = total_loss(y, y2, d, [1.0, 0.0])
    assert float(half.total.data) == pytest.approx(0.5 * (half.equiv[0] + half.invar[0] + half.sce[0]))


def test_total_loss_errors(rng):
    y = rng.normal(size=(3, K))
    with pytest.raises(ShapeError):
        total_loss(y, y, np.ones(3, int), np.ones(2))
    with pytest.raises(ValueError):
        total_loss(y, y, np.ones(3, int), [1.0, 1.2, 0.0])


def test_components_nonnegative(rng):
    y, y2 = rng.normal(size=(16, K)) * 3, rng.normal(size=(16, K)) * 3
    br = total_loss(y, y2, rng.integers(-15, 16, 16), np.ones(16))
    assert np.all(br.equiv >= 0) and np.all(br.invar >= 0) and np.all(br.sce >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(-15, 15), st.integers(0, K - 1))
def test_sce_joint_roll_invariance(seed, d, c):
    r = np.random.default_rng(seed)
    y, y2 = r.normal(size=K) * 2, r.normal(size=K) * 2
    a = float(loss_sce(y, y2, d).data)
    b = float(loss_sce(np.roll(y, c), np.roll(y2, c), d).data)
    assert a == pytest.approx(b, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(-15, 15))
def test_swap_symmetry(seed, d):
    r = np.random.default_rng(seed)
    y, y2 = r.normal(size=K) * 2, r.normal(size=K) * 2
    for fn in (lambda a, b, s: loss_equiv(a, b, s), lambda a, b, s: loss_invar(a, b),
               lambda a, b, s: loss_sce(a, b, s)):
        assert float(fn(y, y2, d).data) == pytest.approx(float(fn(y2, y, -d).data), abs=1e-9)
