"""Synthetic monophonic stems with exact F0/voicing truth, plus WAV and CSV I/O.

Two acoustic profiles are produced. ``clean`` stems are exactly zero between
notes; ``realistic`` stems get a noise floor, an exponentially decaying
reverb tail and a bleed stem from another "instrument".
"""

from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass, field, replace

import numpy as np

SAMPLE_RATE = 16000
HOP = 160
F0_MIN = 27.5
F0_MAX = 4900.0
SILENT_REFERENCE_POWER = 1e-4
REVERB_WET = 0.5
NOTE_RAMP_S = 0.005
# top CQT bin centre, 27.5 * 2 ** (268 / 36)
PITCH_CEILING_HZ = 27.5 * 2 ** (268 / 36)


class RangeError(ValueError):
    pass


class WavFormatError(ValueError):
    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class AnnotationError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError("sample_rate", f"expected {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise ValueError("samples must lie in [-1, 1]")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class F0Track:
    """Frame-rate pitch track; frame ``i`` is centred on sample ``i * hop``."""

    frames: np.ndarray
    f0_hz: np.ndarray
    voiced: np.ndarray
    hop: int = HOP

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=np.int64)
        n = len(self.frames)
        if len(self.f0_hz) != n or len(self.voiced) != n:
            raise AnnotationError("frames, f0_hz and voiced must have equal length")
        if n and np.any(np.diff(self.frames) <= 0):
            raise AnnotationError("frame indices must be strictly increasing")
        if np.any((self.voiced != 0) & (self.voiced != 1)):
            raise AnnotationError("voiced must be 0 or 1")
        v = self.voiced == 1
        if np.any(v & (self.f0_hz == 0)):
            row = int(self.frames[np.argmax(v & (self.f0_hz == 0))])
            raise AnnotationError(f"frame {row}: voiced=1 with f0=0")
        if np.any(~v & (self.f0_hz != 0)):
            row = int(self.frames[np.argmax(~v & (self.f0_hz != 0))])
            raise AnnotationError(f"frame {row}: voiced=0 with nonzero f0")
        if np.any(v & ((self.f0_hz < F0_MIN) | (self.f0_hz > F0_MAX))):
            raise AnnotationError(f"voiced f0 outside [{F0_MIN}, {F0_MAX}] Hz")

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_arrays(cls, f0_hz, voiced, hop=HOP):
        voiced = np.asarray(voiced, dtype=np.int64)
        f0 = np.where(voiced == 1, np.asarray(f0_hz, dtype=np.float64), 0.0)
        return cls(np.arange(len(f0)), f0, voiced, hop)


@dataclass
class Note:
    onset: float
    duration: float
    midi: float
    velocity: float = 0.8

    @property
    def hz(self) -> float:
        return 440.0 * 2 ** ((self.midi - 69) / 12)


@dataclass
class StemSpec:
    """Recipe for one synthetic stem.

    ``decay_rates`` are per-harmonic exponential amplitude decay rates (1/s);
    a shorter list is padded with its last value.
    """

    notes: list = field(default_factory=list)
    duration: float = 1.0
    n_harmonics: int = 8
    decay_rates: tuple = (1.0,)
    vibrato_rate: float = 5.0
    vibrato_depth_cents: float = 0.0
    profile: str = "clean"

    def validate(self):
        if self.profile not in ("clean", "realistic"):
            raise ValueError(f"profile must be 'clean' or 'realistic', got {self.profile!r}")
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be >= 1")
        ordered = sorted(self.notes, key=lambda n: n.onset)
        for a, b in zip(ordered, ordered[1:]):
            if a.onset + a.duration > b.onset + 1e-12:
                raise ValueError(f"notes overlap at {b.onset:.3f} s")
        spread = 2 ** (self.vibrato_depth_cents / 1200)
        for n in self.notes:
            if not 0 < n.velocity <= 1:
                raise ValueError(f"velocity must be in (0, 1], got {n.velocity}")
            if n.hz / spread < F0_MIN or n.hz * spread > PITCH_CEILING_HZ:
                raise RangeError(f"midi {n.midi} ({n.hz:.1f} Hz) outside the CQT pitch range")
            if n.onset < 0 or n.duration <= 0:
                raise ValueError("notes need onset >= 0 and duration > 0")


@dataclass
class DegradeConfig:
    """Recording artefacts; ``noise_floor_snr_db=None`` disables the noise floor."""

    noise_floor_snr_db: float | None = 30.0
    reverb_decay_s: float = 0.25
    bleed_gain: float = 0.02
    bleed_source: StemSpec | None = None

    def validate(self):
        if self.noise_floor_snr_db is not None and not 5 <= self.noise_floor_snr_db <= 60:
            raise ValueError(f"noise_floor_snr_db must be in [5, 60], got {self.noise_floor_snr_db}")
        if self.reverb_decay_s < 0:
            raise ValueError("reverb_decay_s must be >= 0")
        if not 0 <= self.bleed_gain <= 0.5:
            raise ValueError(f"bleed_gain must be in [0, 0.5], got {self.bleed_gain}")

    @classmethod
    def none(cls):
        return cls(noise_floor_snr_db=None, reverb_decay_s=0.0, bleed_gain=0.0)


def _harmonic_decays(spec: StemSpec) -> np.ndarray:
    rates = list(spec.decay_rates) or [0.0]
    rates += [rates[-1]] * (spec.n_harmonics - len(rates))
    return np.asarray(rates[:spec.n_harmonics], dtype=np.float64)


def note_f0(note: Note, spec: StemSpec, t, vib_phase: float):
    """Instantaneous F0 of ``note`` at times ``t`` (s, relative to onset)."""
    depth = spec.vibrato_depth_cents / 1200
    return note.hz * np.exp2(depth * np.sin(2 * np.pi * spec.vibrato_rate * t + vib_phase))


def generate_stem(spec: StemSpec, seed: int, degrade_cfg: DegradeConfig | None = None):
    """Render ``spec`` and its ground-truth track.

    Returns ``(AudioClip, F0Track)``. Frame ``i`` is voiced iff its centre
    sample lies inside a note; its F0 is the note's instantaneous F0 there.
    ``realistic`` stems are passed through :func:`degrade` with
    ``degrade_cfg`` (default :class:`DegradeConfig`).
    """
    spec.validate()
    rng = np.random.default_rng([seed, 0])
    n = int(round(spec.duration * SAMPLE_RATE))
    audio = np.zeros(n)
    n_frames = n // HOP + 1
    f0_frames = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=np.int64)
    decays = _harmonic_decays(spec)
    harmonics = np.arange(1, spec.n_harmonics + 1)
    base_amp = (1.0 / harmonics) / np.sum(1.0 / harmonics)

    for note in sorted(spec.notes, key=lambda m: m.onset):
        start = int(round(note.onset * SAMPLE_RATE))
        stop = min(n, int(round((note.onset + note.duration) * SAMPLE_RATE)))
        phases = rng.uniform(0, 2 * np.pi, spec.n_harmonics)
        vib_phase = rng.uniform(0, 2 * np.pi)
        if stop <= start:
            continue
        t = np.arange(stop - start) / SAMPLE_RATE
        f0 = note_f0(note, spec, t, vib_phase)
        phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
        env = np.ones_like(t)
        ramp = max(1, int(NOTE_RAMP_S * SAMPLE_RATE))
        r = min(ramp, len(t) // 2)
        if r:
            env[:r] = np.linspace(0, 1, r, endpoint=False)
            env[len(t) - r:] = np.linspace(1, 0, r, endpoint=False)
        sig = np.zeros_like(t)
        for h, amp, rate, ph in zip(harmonics, base_amp, decays, phases):
            live = h * f0 < SAMPLE_RATE / 2
            sig += np.where(live, amp * np.exp(-rate * t) * np.sin(h * phase + ph), 0.0)
        audio[start:stop] = note.velocity * env * sig

        lo = -(-start // HOP)
        hi = (stop - 1) // HOP
        idx = np.arange(lo, min(hi, n_frames - 1) + 1)
        idx = idx[idx * HOP < n]
        voiced[idx] = 1
        f0_frames[idx] = f0[idx * HOP - start]

    clip = AudioClip(audio)
    track = F0Track(np.arange(n_frames), f0_frames, voiced)
    if spec.profile == "realistic":
        clip = degrade(clip, degrade_cfg or DegradeConfig(), seed)
    return clip, track


def snr_noise(samples, snr_db: float, rng) -> np.ndarray:
    """White noise at ``snr_db`` below the power of ``samples``.

    A silent input uses the fixed reference power ``SILENT_REFERENCE_POWER``.
    """
    power = float(np.mean(np.square(samples))) if len(samples) else 0.0
    if power == 0.0:
        power = SILENT_REFERENCE_POWER
    return rng.normal(0.0, math.sqrt(power * 10 ** (-snr_db / 10)), size=len(samples))


def reverb_kernel(decay_s: float, rng) -> np.ndarray:
    """White noise under ``exp(-2 t / decay_s)``, ``2 * decay_s`` long, unit energy."""
    n = max(1, int(round(2 * decay_s * SAMPLE_RATE)))
    t = np.arange(n) / SAMPLE_RATE
    kern = rng.standard_normal(n) * np.exp(-t * (2.0 / decay_s))
    return kern / np.sqrt(np.sum(kern * kern))


def degrade(clip: AudioClip, cfg: DegradeConfig, seed: int) -> AudioClip:
    """Add reverb tail, bleed and a noise floor, in that order.

    The noise power is set relative to the clip's own power. When the sum
    exceeds full scale the whole output is scaled back into [-1, 1].
    """
    cfg.validate()
    x = clip.samples
    out = x.copy()
    rng_reverb = np.random.default_rng([seed, 1])
    rng_bleed = np.random.default_rng([seed, 2])
    rng_noise = np.random.default_rng([seed, 3])
    if cfg.reverb_decay_s > 0:
        kern = reverb_kernel(cfg.reverb_decay_s, rng_reverb)
        wet = np.convolve(x, kern)[:len(x)]
        out = out + REVERB_WET * wet
    if cfg.bleed_gain > 0:
        src = cfg.bleed_source or _default_bleed_spec(clip.duration, rng_bleed)
        src = replace(src, profile="clean", duration=clip.duration)
        bleed, _ = generate_stem(src, int(rng_bleed.integers(2**31)))
        b = np.zeros(len(x))
        b[:min(len(x), len(bleed))] = bleed.samples[:len(x)]
        out = out + cfg.bleed_gain * b
    if cfg.noise_floor_snr_db is not None:
        out = out + snr_noise(x, cfg.noise_floor_snr_db, rng_noise)
    peak = np.abs(out).max() if len(out) else 0.0
    if peak > 1.0:
        out = out / peak
    return AudioClip(out, clip.sample_rate)


def _default_bleed_spec(duration, rng) -> StemSpec:
    notes, t = [], rng.uniform(0.0, 0.2)
    while True:
        d = rng.uniform(0.3, 0.8)
        if t + d > duration:
            break
        notes.append(Note(t, d, float(rng.integers(40, 60)), 0.8))
        t += d + rng.uniform(0.05, 0.3)
    return StemSpec(notes, duration, n_harmonics=6, decay_rates=(0.5, 1.0, 2.0))


# --- demo corpus -------------------------------------------------------------

DEMO_INSTRUMENT = dict(n_harmonics=10, decay_rates=(0.6, 0.9, 1.3, 1.8, 2.4),
                       vibrato_rate=5.5)


@dataclass
class CorpusItem:
    name: str
    split: str          # "train" or "heldout"
    clip: AudioClip
    track: F0Track


def random_melody(duration: float, rng, midi_range=(55, 84)) -> list:
    """Random-walk note sequence with gaps, in the 200-1200 Hz register."""
    lo, hi = midi_range
    notes, t = [], float(rng.uniform(0.05, 0.3))
    midi = int(rng.integers(lo, hi + 1))
    while True:
        d = float(rng.uniform(0.25, 0.7))
        if t + d > duration - 0.05:
            break
        notes.append(Note(t, d, float(midi), float(rng.uniform(0.5, 0.9))))
        t += d + float(rng.uniform(0.05, 0.3))
        midi = int(np.clip(midi + rng.integers(-5, 6), lo, hi))
    return notes


def demo_corpus(seed: int = 7, n_clips: int = 20, clip_seconds: float = 3.0,
                n_heldout: int = 5) -> list:
    """One synthetic instrument: ``realistic`` training clips, ``clean`` held-out clips."""
    if not 0 < n_heldout < n_clips:
        raise ValueError("need 0 < n_heldout < n_clips")
    items = []
    for i in range(n_clips):
        rng = np.random.default_rng([seed, 100 + i])
        split = "heldout" if i >= n_clips - n_heldout else "train"
        spec = StemSpec(random_melody(clip_seconds, rng), clip_seconds,
                        vibrato_depth_cents=float(rng.uniform(0, 20)),
                        profile="clean" if split == "heldout" else "realistic",
                        **DEMO_INSTRUMENT)
        clip, track = generate_stem(spec, seed=int(rng.integers(2**31)))
        items.append(CorpusItem(f"{split}_{i:02d}", split, clip, track))
    return items


# --- WAV ---------------------------------------------------------------------

def write_wav(path, clip: AudioClip):
    """16-bit PCM mono, rounding to the nearest of 32768 steps per unit."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    try:
        w = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise WavFormatError("format", f"{path}: {exc}") from exc
    with w:
        if w.getnchannels() != 1:
            raise WavFormatError("channels", f"expected mono, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise WavFormatError("sample_width", f"expected 16-bit, got {8 * w.getsampwidth()}-bit")
        if w.getframerate() != SAMPLE_RATE:
            raise WavFormatError("sample_rate", f"expected {SAMPLE_RATE}, got {w.getframerate()}")
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


# --- annotations -------------------------------------------------------------

ANNOTATION_HEADER = ["frame", "f0_hz", "voiced"]


def write_annotation(path, track: F0Track):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for fr, f0, v in zip(track.frames, track.f0_hz, track.voiced):
            w.writerow([int(fr), f"{f0:.6f}", int(v)])


def read_annotation(path, hop=HOP) -> F0Track:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ANNOTATION_HEADER:
        raise AnnotationError(f"{path}: header must be {','.join(ANNOTATION_HEADER)}")
    frames, f0s, voiced = [], [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            fr, f0, v = int(row[0]), float(row[1]), int(row[2])
        except (ValueError, IndexError) as exc:
            raise AnnotationError(f"{path}:{line_no}: malformed row {row}") from exc
        if v == 1 and f0 == 0:
            raise AnnotationError(f"{path}:{line_no}: frame {fr} voiced=1 with f0=0")
        frames.append(fr)
        f0s.append(f0)
        voiced.append(v)
    return F0Track(frames, f0s, voiced, hop)
