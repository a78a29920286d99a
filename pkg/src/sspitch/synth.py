"""Differentiable additive harmonic synthesizer and its analysis-by-synthesis fit.

``s(t) = 10**g_master * v(t) * sum_h g_h(t) sin(phi_h(t))`` where
``phi_h = 2 pi cumsum(h f0 / fs) + psi_h`` and ``g_h`` is the linear
upsampling of ``softplus(G_pre[h])``. Harmonics above Nyquist are masked.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Tensor, ops, parameter
from .corpus import HOP, SAMPLE_RATE, F0Track

log = logging.getLogger(__name__)

LOG_EPS = 1e-7
FADE_S = 0.010


@dataclass
class SynthParams:
    g_pre: np.ndarray      # (H, T)
    psi: np.ndarray        # (H,)
    g_master: float

    @property
    def n_harmonics(self) -> int:
        return self.g_pre.shape[0]

    @classmethod
    def initial(cls, n_harmonics: int, n_frames: int, gain: float = 0.01):
        """``softplus(G_pre) == gain`` everywhere, zero phases, unit master gain."""
        g_pre = np.full((n_harmonics, n_frames), math.log(math.expm1(gain)))
        return cls(g_pre, np.zeros(n_harmonics), 0.0)

    def gains(self) -> np.ndarray:
        return np.logaddexp(0.0, self.g_pre)


@dataclass(frozen=True)
class MrStftConfig:
    fft_sizes: tuple = (512, 1024, 2048)

    def __post_init__(self):
        sizes = list(self.fft_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"fft_sizes must be non-empty and strictly increasing: {sizes}")


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 500
    lr: float = 1e-2
    lambda_smooth: float = 0.1
    n_harmonics: int = 24
    mrstft: MrStftConfig = field(default_factory=MrStftConfig)
    fade_s: float = FADE_S

    def __post_init__(self):
        if self.lambda_smooth < 0:
            raise ValueError("lambda_smooth must be >= 0")
        if self.epochs < 0 or self.n_harmonics < 1:
            raise ValueError("epochs must be >= 0 and n_harmonics >= 1")


def upsample_contours(track: F0Track, n_samples: int, hop: int = HOP):
    """Sample-rate ``(f0, v)``: linear F0 between frame centres, nearest-frame voicing.

    Unvoiced frames first take the F0 of the nearest voiced frame so that
    note edges do not glide towards 0 Hz.
    """
    if len(track) == 0:
        raise ValueError("track is empty")
    f0 = np.asarray(track.f0_hz, dtype=np.float64).copy()
    voiced = np.asarray(track.voiced, dtype=bool)
    if voiced.any() and not voiced.all():
        idx = np.arange(len(f0))
        vi = np.flatnonzero(voiced)
        pos = np.searchsorted(vi, idx)
        left = vi[np.clip(pos - 1, 0, len(vi) - 1)]
        right = vi[np.clip(pos, 0, len(vi) - 1)]
        f0 = np.where(voiced, f0, f0[np.where(np.abs(idx - left) <= np.abs(right - idx), left, right)])
    rows = np.stack([f0, voiced.astype(np.float64)])
    f0_s = ops.upsample_linear(rows[:1], n_samples, hop).data[0]
    v_s = ops.upsample_nearest(rows[1:], n_samples, hop).data[0]
    return f0_s, v_s


def harmonic_phases(f0, n_harmonics: int, fs: int = SAMPLE_RATE) -> np.ndarray:
    """``(H, n)`` array of ``2 pi h cumsum(f0 / fs)`` (without the offsets)."""
    base = 2 * np.pi * np.cumsum(np.asarray(f0, dtype=np.float64) / fs)
    return np.arange(1, n_harmonics + 1)[:, None] * base[None, :]


def nyquist_mask(f0, n_harmonics: int, fs: int = SAMPLE_RATE) -> np.ndarray:
    h = np.arange(1, n_harmonics + 1)[:, None]
    return (h * np.asarray(f0)[None, :] <= fs / 2).astype(np.float64)


def synthesize_graph(g_pre: Tensor, psi: Tensor, g_master: Tensor, f0, v,
                     fs: int = SAMPLE_RATE, hop: int = HOP) -> Tensor:
    """Differentiable synthesis from parameter tensors; returns an (n,) tensor."""
    h, _ = g_pre.shape
    n = len(f0)
    gains = ops.upsample_linear(ops.softplus(g_pre), n, hop)
    phase = ops.add(ops.matmul(ops.reshape(psi, (h, 1)), np.ones((1, n))),
                    harmonic_phases(f0, h, fs))
    partials = ops.mul(ops.mul(gains, ops.sin(phase)), nyquist_mask(f0, h, fs))
    master = ops.exp(ops.affine(g_master, math.log(10.0)))
    return ops.mul(ops.mul(ops.sum(partials, axis=0), np.asarray(v, dtype=np.float64)), master)


def synthesize(params: SynthParams, f0, v, fs: int = SAMPLE_RATE, hop: int = HOP) -> np.ndarray:
    f0 = np.asarray(f0, dtype=np.float64)
    if len(f0) != len(v):
        raise ValueError("f0 and v must have equal length")
    out = synthesize_graph(Tensor(params.g_pre), Tensor(params.psi),
                           Tensor(np.array([params.g_master])), f0, v, fs, hop)
    return out.data


def fade(n: int, fs: int = SAMPLE_RATE, fade_s: float = FADE_S) -> np.ndarray:
    """Raised-cosine fade-in and fade-out envelope of length ``n``."""
    env = np.ones(n)
    m = min(int(round(fade_s * fs)), n // 2)
    if m > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(m) / m)
        env[:m] = ramp
        env[n - m:] = ramp[::-1]
    return env


def mrstft_loss(s, y, cfg: MrStftConfig = MrStftConfig()) -> Tensor:
    """Sum over resolutions of mean |S - Y| + mean (log(S + eps) - log(Y + eps))**2."""
    s = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=np.float64))
    y_data = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if s.shape != y_data.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y_data.shape}")
    total = None
    for n_fft in cfg.fft_sizes:
        hop = n_fft // 4
        mag_s = ops.stft_magnitude(s, n_fft, hop)
        mag_y = ops.stft_magnitude(Tensor(y_data), n_fft, hop).data
        lin = ops.mean(ops.abs(ops.sub(mag_s, mag_y)))
        logd = ops.sub(ops.log(ops.affine(mag_s, 1.0, LOG_EPS)), np.log(mag_y + LOG_EPS))
        term = ops.add(lin, ops.mean(ops.square(logd)))
        total = term if total is None else ops.add(total, term)
    return total


def tv_smoothness(g) -> Tensor:
    """Mean absolute frame-to-frame change of an (H, T) gain matrix."""
    g = g if isinstance(g, Tensor) else Tensor(np.asarray(g, dtype=np.float64))
    if g.ndim != 2:
        raise ValueError(f"expected (H, T) gains, got shape {g.shape}")
    if g.shape[1] < 2:
        warnings.warn("tv_smoothness needs T >= 2; returning 0", stacklevel=2)
        return ops.affine(ops.sum(g), 0.0)
    diff = ops.sub(ops.getitem(g, (slice(None), slice(1, None))),
                   ops.getitem(g, (slice(None), slice(None, -1))))
    return ops.mean(ops.abs(diff))


@dataclass
class FitResult:
    params: SynthParams
    curve: list             # (epoch, total, mrstft, tv)
    audio: np.ndarray
    aborted: bool = False


def fit_synth(target, track: F0Track, cfg: FitConfig = FitConfig(), hop: int = HOP,
              init: SynthParams | None = None) -> FitResult:
    """Fit gains, phases and master gain to ``target`` with Adam.

    The loss is ``MR-STFT(fade * s, fade * y) + lambda_smooth * TV(softplus(G_pre))``.
    A non-finite loss stops the fit and returns the best parameters seen.
    """
    y = np.asarray(getattr(target, "samples", target), dtype=np.float64)
    f0, v = upsample_contours(track, len(y), hop)
    env = fade(len(y), fade_s=cfg.fade_s)
    y_faded = y * env
    p0 = init or SynthParams.initial(cfg.n_harmonics, len(track))
    params = {"g_pre": parameter(p0.g_pre, "g_pre"), "psi": parameter(p0.psi, "psi"),
              "g_master": parameter(np.array([p0.g_master]), "g_master")}
    opt = Adam(params, lr=cfg.lr)
    curve, best, best_loss, aborted = [], None, np.inf, False

    def snapshot():
        return SynthParams(params["g_pre"].data.copy(), params["psi"].data.copy(),
                           float(params["g_master"].data[0]))

    for epoch in range(cfg.epochs + 1):
        s = synthesize_graph(params["g_pre"], params["psi"], params["g_master"], f0, v, hop=hop)
        spec = mrstft_loss(ops.mul(s, env), y_faded, cfg.mrstft)
        tv = tv_smoothness(ops.softplus(params["g_pre"]))
        total = ops.add(spec, ops.affine(tv, cfg.lambda_smooth))
        value = float(total.data)
        if not math.isfinite(value):
            log.warning("non-finite synth loss at epoch %d; keeping best parameters", epoch)
            aborted = True
            break
        curve.append((epoch, value, float(spec.data), float(tv.data)))
        if value < best_loss:
            best_loss, best = value, snapshot()
        if epoch == cfg.epochs:
            break
        opt.zero_grad()
        total.backward()
        try:
            opt.step()
        except FloatingPointError as exc:
            log.warning("%s; keeping best parameters", exc)
            aborted = True
            break
    best = best or snapshot()
    return FitResult(best, curve, synthesize(best, f0, v, hop=hop), aborted)
