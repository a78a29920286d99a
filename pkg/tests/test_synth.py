import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sspitch.corpus import F0Track
from sspitch.synth import (FitConfig, MrStftConfig, SynthParams, fade, fit_synth,
                           harmonic_phases, mrstft_loss, nyquist_mask, synthesize,
                           tv_smoothness, upsample_contours)

FS = 16000


def _softplus_inv(g):
    return math.log(math.expm1(g))


def _brute_synth(gains, psi, master, f0, v):
    """Sample-by-sample loop with frame-constant gains."""
    out = np.zeros(len(f0))
    acc = 0.0
    for n in range(len(f0)):
        acc += f0[n] / FS
        for h in range(len(psi)):
            if (h + 1) * f0[n] <= FS / 2:
                out[n] += gains[h] * math.sin(2 * math.pi * (h + 1) * acc + psi[h])
        out[n] *= v[n] * 10 ** master
    return out


def test_initial_gains():
    p = SynthParams.initial(5, 7, gain=0.01)
    np.testing.assert_allclose(p.gains(), 0.01, rtol=1e-12)
    assert p.n_harmonics == 5
    assert np.all(p.psi == 0) and p.g_master == 0.0


def test_constant_gain_matches_brute_force(rng):
    n, t, h = 800, 6, 5
    gains = rng.uniform(0.05, 0.5, size=h)
    g_pre = np.repeat(np.log(np.expm1(gains))[:, None], t, axis=1)
    psi = rng.uniform(-np.pi, np.pi, size=h)
    f0 = np.full(n, 1900.0)     # fifth harmonic is above Nyquist
    v = (np.arange(n) % 300 < 200).astype(float)
    got = synthesize(SynthParams(g_pre, psi, -0.3), f0, v)
    want = _brute_synth(gains, psi, -0.3, f0, v)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_master_gain_is_log10():
    p = SynthParams(np.full((1, 2), _softplus_inv(0.5)), np.zeros(1), 0.0)
    f0, v = np.full(400, 200.0), np.ones(400)
    a = synthesize(p, f0, v)
    p.g_master = 1.0
    np.testing.assert_allclose(synthesize(p, f0, v), 10 * a, rtol=1e-12)


def test_unvoiced_is_silent():
    p = SynthParams.initial(4, 3, gain=0.3)
    out = synthesize(p, np.full(320, 300.0), np.zeros(320))
    assert np.all(out == 0)


def test_nyquist_mask():
    m = nyquist_mask([3000.0, 1000.0], 4)
    np.testing.assert_array_equal(m[:, 0], [1, 1, 0, 0])
    np.testing.assert_array_equal(m[:, 1], [1, 1, 1, 1])


def test_harmonic_phases_are_integer_multiples():
    ph = harmonic_phases(np.full(10, 440.0), 3)
    np.testing.assert_allclose(ph[2], 3 * ph[0])
    assert ph[0, 0] == pytest.approx(2 * np.pi * 440 / FS)


def test_synthesize_length_mismatch():
    with pytest.raises(ValueError):
        synthesize(SynthParams.initial(2, 2), np.ones(10), np.ones(9))


def test_contours_interpolate_between_frame_centres():
    track = F0Track.from_arrays([200.0, 400.0, 400.0], [1, 1, 1])
    f0, v = upsample_contours(track, 480)
    assert f0[0] == 200.0
    assert f0[80] == pytest.approx(300.0)
    assert f0[160] == 400.0
    assert np.all(v == 1)


def test_contours_fill_unvoiced_with_nearest_voiced():
    track = F0Track.from_arrays([0.0, 300.0, 0.0, 0.0, 500.0], [0, 1, 0, 0, 1])
    f0, v = upsample_contours(track, 5 * 160)
    assert f0.min() >= 300.0
    assert f0[0] == 300.0 and f0[2 * 160] == 300.0 and f0[3 * 160] == 500.0
    assert v[0] == 0 and v[160] == 1


def test_contours_empty_track():
    with pytest.raises(ValueError):
        upsample_contours(F0Track.from_arrays([], []), 10)


def test_fade_shape():
    env = fade(16000)
    assert env[0] == 0.0
    assert env[8000] == 1.0
    np.testing.assert_allclose(env[:160], env[::-1][:160])
    assert np.all(np.diff(env[:160]) > 0)


def test_fade_short_signal():
    env = fade(3)
    assert env.shape == (3,)
    assert np.all(env <= 1)


def test_mrstft_zero_for_identical(rng):
    y = rng.normal(size=4096) * 0.1
    assert float(mrstft_loss(y, y).data) == 0.0


def test_mrstft_positive_and_length_checked(rng):
    y = rng.normal(size=4096) * 0.1
    assert float(mrstft_loss(y * 0.5, y).data) > 0
    with pytest.raises(ValueError, match="length"):
        mrstft_loss(y[:-1], y)


def test_mrstft_config_validation():
    with pytest.raises(ValueError):
        MrStftConfig(fft_sizes=(1024, 512))
    with pytest.raises(ValueError):
        MrStftConfig(fft_sizes=())


def test_tv_worked_example():
    g = np.array([[0.0, 1.0, 3.0], [2.0, 2.0, 1.0]])
    # |1| + |2| + |0| + |-1| over 4 differences
    assert float(tv_smoothness(g).data) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12), st.floats(-3, 3))
def test_tv_ignores_constant_offset(row, c):
    g = np.array([row])
    assert float(tv_smoothness(g + c).data) == pytest.approx(float(tv_smoothness(g).data),
                                                             abs=1e-9)


def test_tv_single_frame_warns():
    with pytest.warns(UserWarning):
        assert float(tv_smoothness(np.ones((3, 1))).data) == 0.0


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(lambda_smooth=-1)
    with pytest.raises(ValueError):
        FitConfig(n_harmonics=0)


def test_short_fit_reduces_loss():
    n_frames = 26
    track = F0Track.from_arrays(np.full(n_frames, 330.0), np.ones(n_frames))
    f0, v = upsample_contours(track, 4000)
    truth = SynthParams(np.full((4, n_frames), _softplus_inv(0.2)),
                        np.array([0.0, 1.0, -0.5, 2.0]), 0.0)
    target = synthesize(truth, f0, v)
    res = fit_synth(target, track, FitConfig(epochs=20, lr=0.05, n_harmonics=4))
    assert len(res.curve) == 21
    assert [c[0] for c in res.curve] == list(range(21))
    assert res.curve[-1][2] < res.curve[0][2]
    assert res.audio.shape == target.shape
    assert not res.aborted
