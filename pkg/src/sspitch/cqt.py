"""Log-magnitude constant-Q transform and frequency-axis augmentations."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .corpus import SAMPLE_RATE, AudioClip

DELTA_MAX = 15
MAGIC = b"CQTS"
VERSION = 1


@dataclass(frozen=True)
class CqtConfig:
    f_min: float = 27.5
    bins_per_octave: int = 36
    n_bins: int = 269
    hop: int = 160
    sample_rate: int = SAMPLE_RATE
    eps: float = 1e-8

    def __post_init__(self):
        if self.n_bins != 269:
            raise ValueError(f"n_bins: expected 269, got {self.n_bins}")
        top = self.f_min * 2 ** ((self.n_bins - 1) / self.bins_per_octave)
        if top >= self.sample_rate / 2:
            raise ValueError(f"n_bins: top bin {top:.1f} Hz reaches Nyquist")

    @property
    def bins_per_semitone(self) -> int:
        return self.bins_per_octave // 12

    @property
    def quality(self) -> float:
        return 1.0 / (2 ** (1.0 / self.bins_per_octave) - 1.0)


@dataclass
class CqtSpectrogram:
    """(T, B) matrix of ``log(max(|CQT|, eps))`` values."""

    values: np.ndarray
    hop: int = 160
    config: CqtConfig = CqtConfig()

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class ShiftPair:
    view_a: np.ndarray
    view_b: np.ndarray
    delta: int


def bin_to_hz(k, cfg: CqtConfig = CqtConfig()):
    """Centre frequency of (possibly fractional) bin ``k``."""
    k_arr = np.asarray(k, dtype=np.float64)
    if np.any(k_arr < 0) or np.any(k_arr > cfg.n_bins - 1):
        raise ValueError(f"bin index out of range [0, {cfg.n_bins - 1}]: {k}")
    out = cfg.f_min * np.exp2(k_arr / cfg.bins_per_octave)
    return float(out) if np.ndim(k) == 0 else out


def hz_to_bin(f, cfg: CqtConfig = CqtConfig()):
    """Real-valued inverse of :func:`bin_to_hz` (no range check)."""
    f_arr = np.asarray(f, dtype=np.float64)
    out = cfg.bins_per_octave * np.log2(f_arr / cfg.f_min)
    return float(out) if np.ndim(f) == 0 else out


@lru_cache(maxsize=4)
def _kernel_bank(cfg: CqtConfig):
    q = cfg.quality
    lengths, offsets, real, imag = [], [], [], []
    pos = 0
    for k in range(cfg.n_bins):
        f = cfg.f_min * 2 ** (k / cfg.bins_per_octave)
        n = int(math.ceil(q * cfg.sample_rate / f))
        window = np.hanning(n)
        window /= window.sum()
        rel = np.arange(n) - n // 2
        phase = -2 * np.pi * f * rel / cfg.sample_rate
        real.append(window * np.cos(phase))
        imag.append(window * np.sin(phase))
        lengths.append(n)
        offsets.append(pos)
        pos += n
    lengths = np.asarray(lengths, dtype=np.int64)
    return (np.concatenate(real), np.concatenate(imag),
            np.asarray(offsets, dtype=np.int64), lengths)


def kernel_lengths(cfg: CqtConfig = CqtConfig()) -> np.ndarray:
    return _kernel_bank(cfg)[3].copy()


def compute_cqt(clip: AudioClip, cfg: CqtConfig = CqtConfig()) -> CqtSpectrogram:
    """Centre-aligned CQT with one frame every ``cfg.hop`` samples.

    ``T = len // hop + 1`` frames; samples outside the clip count as zeros.
    """
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample_rate: expected {cfg.sample_rate}, got {clip.sample_rate}")
    kr, ki, offsets, lengths = _kernel_bank(cfg)
    x = np.asarray(clip.samples, dtype=np.float64)
    n_frames = len(x) // cfg.hop + 1
    pad = int(lengths.max()) // 2 + 1
    xpad = np.zeros(len(x) + 2 * pad + cfg.hop)
    xpad[pad:pad + len(x)] = x
    starts = (pad - lengths // 2).astype(np.int64)
    mag = kernels.cqt_direct(xpad, kr, ki, offsets, lengths, starts, cfg.hop, n_frames)
    values = np.log(np.maximum(mag, cfg.eps))
    return CqtSpectrogram(values, cfg.hop, cfg)


def shift_frame(x, delta: int) -> np.ndarray:
    """Shift frame(s) along the last (frequency) axis: ``out[b] = x[b - delta]``.

    Vacated bins take each frame's minimum value, never wrapped content.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if abs(delta) >= n:
        raise ValueError(f"|delta| must be < {n}, got {delta}")
    if delta == 0:
        return x.copy()
    floor = x.min(axis=-1, keepdims=True)
    out = np.empty_like(x)
    if delta > 0:
        out[..., delta:] = x[..., :-delta]
        out[..., :delta] = floor
    else:
        out[..., :delta] = x[..., -delta:]
        out[..., delta:] = floor
    return out


def _augment_view(x, rng, eps, gain=None, snr_db=None, noise=True):
    g = rng.uniform(0.5, 1.5) if gain is None else gain
    snr = rng.uniform(15.0, 50.0) if snr_db is None else snr_db
    x = x + np.log(g)
    if noise:
        m = np.exp(x)
        p_noise = np.mean(m * m) * 10 ** (-snr / 10)
        m = m + rng.normal(0.0, np.sqrt(p_noise), size=m.shape)
        x = np.log(np.maximum(m, eps))
    return x


def augment_pair(x, seed: int, epoch: int, frame_id: int, *, delta_max: int = DELTA_MAX,
                 delta=None, gain=None, snr_db=None, noise=True, eps=1e-8) -> ShiftPair:
    """Draw a transposed, independently augmented pair of views of frame ``x``.

    All randomness comes from a stream keyed by ``(seed, epoch, frame_id)``.
    ``delta``, ``gain``, ``snr_db`` and ``noise`` override the random draws
    (``noise=False`` disables the SNR noise entirely).
    """
    rng = np.random.default_rng([seed, epoch, frame_id])
    d = draw_delta(rng, delta_max)
    if delta is not None:
        d = int(delta)
    x = np.asarray(x, dtype=np.float64)
    view_b = shift_frame(x, d)
    a = _augment_view(x, rng, eps, gain, snr_db, noise)
    b = _augment_view(view_b, rng, eps, gain, snr_db, noise)
    return ShiftPair(a, b, d)


def draw_delta(rng, delta_max: int = DELTA_MAX) -> int:
    """Uniform over the nonzero integers in ``[-delta_max, delta_max]``."""
    d = int(rng.integers(1, delta_max + 1))
    return d if rng.random() < 0.5 else -d


def write_spectrogram(path, spec: CqtSpectrogram):
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    t, b = values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IIII", VERSION, t, b, spec.hop))
        fh.write(values.tobytes())


def read_spectrogram(path) -> CqtSpectrogram:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a CQTS file")
    version, t, b, hop = struct.unpack_from("<IIII", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(buf) != 20 + 4 * t * b:
        raise ValueError(f"{path}: expected {t}x{b} floats, file size {len(buf)}")
    values = np.frombuffer(buf, dtype="<f4", offset=20).reshape(t, b).astype(np.float64)
    return CqtSpectrogram(values, hop)
