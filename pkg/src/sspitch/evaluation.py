"""Raw pitch / raw chroma accuracy, weight histograms and CQT overlays."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .corpus import F0Track

THRESHOLD_CENTS = 50.0


class UndefinedMetricError(ValueError):
    """The reference track has no voiced frames."""


@dataclass
class PitchMetrics:
    rpa: float
    rca: float
    frames: int
    threshold_cents: float = THRESHOLD_CENTS

    def to_json(self) -> str:
        return json.dumps({"rpa": self.rpa, "rca": self.rca, "frames": self.frames,
                           "threshold_cents": self.threshold_cents})


def cent_error(est_hz, ref_hz) -> np.ndarray:
    """``1200 log2(est / ref)``; a non-positive estimate gives ``inf``."""
    est = np.asarray(est_hz, dtype=np.float64)
    ref = np.asarray(ref_hz, dtype=np.float64)
    out = np.full(est.shape, np.inf)
    ok = est > 0
    out[ok] = 1200.0 * np.log2(est[ok] / ref[ok])
    return out


def fold_octave(cents) -> np.ndarray:
    """Reduce cent errors modulo 1200 into [-600, 600]."""
    c = np.asarray(cents, dtype=np.float64)
    out = np.full(c.shape, np.inf)
    ok = np.isfinite(c)
    out[ok] = c[ok] - 1200.0 * np.round(c[ok] / 1200.0)
    return out


def rpa_rca(est: F0Track, ref: F0Track, threshold_cents: float = THRESHOLD_CENTS) -> PitchMetrics:
    """Accuracy over reference-voiced frames; estimated voicing is ignored."""
    if len(est) != len(ref) or est.hop != ref.hop:
        raise ValueError(f"frame grids differ: {len(est)} frames / hop {est.hop} vs "
                         f"{len(ref)} frames / hop {ref.hop}")
    voiced = np.asarray(ref.voiced, dtype=bool)
    n = int(voiced.sum())
    if n == 0:
        raise UndefinedMetricError("reference has no voiced frames")
    err = cent_error(np.asarray(est.f0_hz)[voiced], np.asarray(ref.f0_hz)[voiced])
    rpa = 100.0 * np.mean(np.abs(err) <= threshold_cents)
    rca = 100.0 * np.mean(np.abs(fold_octave(err)) <= threshold_cents)
    return PitchMetrics(float(rpa), float(rca), n, threshold_cents)


def pooled_rpa_rca(pairs, threshold_cents: float = THRESHOLD_CENTS) -> PitchMetrics:
    """Frame-weighted metrics over several ``(est, ref)`` track pairs."""
    hits_p = hits_c = total = 0
    for est, ref in pairs:
        m = rpa_rca(est, ref, threshold_cents)
        hits_p += m.rpa * m.frames / 100.0
        hits_c += m.rca * m.frames / 100.0
        total += m.frames
    if total == 0:
        raise UndefinedMetricError("no track pairs")
    return PitchMetrics(100.0 * hits_p / total, 100.0 * hits_c / total, total, threshold_cents)


@dataclass
class WeightHistogram:
    counts: np.ndarray
    edges: np.ndarray
    bimodality: float


def weight_histogram(weights, n_bins: int = 20) -> WeightHistogram:
    """Equal-width histogram on [0, 1]; bimodality = share with w > 0.8 or w < 0.2."""
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty weight table")
    counts, edges = np.histogram(w, bins=n_bins, range=(0.0, 1.0))
    return WeightHistogram(counts, edges, float(np.mean((w > 0.8) | (w < 0.2))))


def spectrogram_image(values) -> np.ndarray:
    """(B, T) uint8 image, low bins at the bottom, min-max scaled."""
    v = np.asarray(values, dtype=np.float64).T[::-1]
    lo, hi = v.min(initial=0.0), v.max(initial=0.0)
    scaled = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    return np.round(255 * scaled).astype(np.uint8)


def write_pgm(path, image: np.ndarray):
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def export_overlay(path_pgm, path_csv, spec, est: F0Track, weights=None, voicing=None):
    """Burn the estimated F0 path into a grayscale CQT image and write a per-frame CSV.

    Path pixels are black (0) at the rounded bin of each voiced frame.
    Returns the image array.
    """
    from .cqt import hz_to_bin

    values = np.asarray(spec.values)
    t, b = values.shape
    n_est = len(est)
    if n_est and n_est != t:
        raise ValueError(f"frame grids differ: spectrogram {t} frames, track {n_est}")
    for name, arr in (("weights", weights), ("voicing", voicing)):
        if arr is not None and len(arr) != t:
            raise ValueError(f"{name} has {len(arr)} entries for {t} frames")
    img = spectrogram_image(values)
    if n_est:
        f0 = np.asarray(est.f0_hz, dtype=np.float64)
        on = np.asarray(est.voiced, dtype=bool) & (f0 > 0)
        bins = np.full(t, -1)
        bins[on] = np.round(hz_to_bin(f0[on])).astype(np.int64)
        cols = np.flatnonzero((bins >= 0) & (bins < b))
        img[b - 1 - bins[cols], cols] = 0
    write_pgm(path_pgm, img)
    with open(path_csv, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame", "f0_hz", "weight", "voiced"])
        for i in range(t):
            f0 = float(est.f0_hz[i]) if n_est else 0.0
            w = "" if weights is None else f"{float(weights[i]):.6f}"
            v = "" if voicing is None else int(voicing[i])
            wr.writerow([i, f"{f0:.6f}", w, v])
    return img
