"""EM-style training: weighted M-steps alternating with SCE-driven E-steps.

Every frame carries a weight ``w`` in [0, 1], initialised to 1. After a
warm-up of ``k_epochs`` epochs, every ``k_epochs`` epochs the frozen model
scores each frame's shift cross-entropy, the scores are min-max normalised over
the whole training set, and ``w <- max(0, w - lambda(e) * score)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tensor, ops
from .corpus import AudioClip, Note, StemSpec, generate_stem
from .cqt import CqtConfig, augment_pair, compute_cqt, hz_to_bin, shift_frame
from .losses import loss_sce, total_loss
from .model import ModelConfig, PitchModel, decode_pitch, shift_output, init_model, softmax_rows

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
WEIGHT_HEADER = ["clip", "frame", "weight", "sce_norm"]


class TrainingError(RuntimeError):
    """Training aborted; ``checkpoint`` names the last good checkpoint, if any."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    k_epochs: int = 5
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    delta_max: int = 15
    checkpoint_every: int = 5
    calibrate: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.k_epochs < 1:
            raise ValueError("k_epochs must be >= 1")
        if self.epochs < 0 or self.epochs % self.k_epochs:
            raise ValueError(f"epochs ({self.epochs}) must be a non-negative multiple of "
                             f"k_epochs ({self.k_epochs})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 1 <= self.delta_max < 269:
            raise ValueError("delta_max must be in [1, 268]")


@dataclass
class FrameDataset:
    """CQT frames stacked row-wise, each keyed by (clip id, frame index)."""

    frames: np.ndarray
    clips: list
    frame_index: np.ndarray

    def __post_init__(self):
        if len(self.frames) != len(self.clips) or len(self.frames) != len(self.frame_index):
            raise ValueError("frames, clips and frame_index must have equal length")

    def __len__(self):
        return len(self.frames)

    @classmethod
    def from_spectrograms(cls, items):
        """``items`` is an iterable of ``(clip_id, CqtSpectrogram)``."""
        frames, clips, idx = [], [], []
        for clip_id, spec in items:
            frames.append(np.asarray(spec.values, dtype=np.float64))
            clips += [clip_id] * spec.n_frames
            idx.append(np.arange(spec.n_frames))
        if not frames:
            return cls(np.zeros((0, 269)), [], np.zeros(0, dtype=np.int64))
        return cls(np.concatenate(frames), clips, np.concatenate(idx))


@dataclass
class SampleWeightTable:
    clips: list
    frames: np.ndarray
    weights: np.ndarray
    sce_norm: np.ndarray

    @classmethod
    def initial(cls, dataset: FrameDataset):
        n = len(dataset)
        return cls(list(dataset.clips), dataset.frame_index.copy(), np.ones(n),
                   np.full(n, np.nan))

    def __len__(self):
        return len(self.weights)

    def deciles(self) -> list:
        return [float(v) for v in np.quantile(self.weights, np.linspace(0, 1, 11))]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(WEIGHT_HEADER)
            for c, f, w, s in zip(self.clips, self.frames, self.weights, self.sce_norm):
                wr.writerow([c, int(f), f"{w:.9f}", "" if np.isnan(s) else f"{s:.9f}"])

    @classmethod
    def read_csv(cls, path):
        clips, frames, weights, norms = [], [], [], []
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header != WEIGHT_HEADER:
                raise ValueError(f"{path}: expected header {','.join(WEIGHT_HEADER)}")
            for row in rd:
                clips.append(row[0])
                frames.append(int(row[1]))
                weights.append(float(row[2]))
                norms.append(float(row[3]) if row[3] else np.nan)
        return cls(clips, np.asarray(frames, dtype=np.int64), np.asarray(weights),
                   np.asarray(norms))


def lambda_anneal(e) -> float:
    """Annealing factor ``exp(e**1.25 / 1000) - 1``."""
    if e < 0:
        raise ValueError(f"epoch must be >= 0, got {e}")
    return math.expm1(e ** 1.25 / 1000.0)


def normalize_sce(losses) -> np.ndarray:
    """Min-max normalise over all frames; a constant input maps to zeros."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("normalize_sce needs at least one value")
    lo = losses.min()
    return (losses - lo) / (losses.max() - lo + NORM_EPS)


def apply_weight_update(weights, sce_norm, lam) -> np.ndarray:
    return np.maximum(0.0, np.asarray(weights) - lam * np.asarray(sce_norm))


def shift_views(dataset: FrameDataset, seed: int, epoch: int, delta_max: int = 15):
    """Unaugmented transposed views with a per-frame delta keyed by (seed, epoch, frame)."""
    deltas = np.empty(len(dataset), dtype=np.int64)
    views = np.empty_like(dataset.frames)
    for i, x in enumerate(dataset.frames):
        pair = augment_pair(x, seed, epoch, i, delta_max=delta_max, gain=1.0, noise=False)
        deltas[i] = pair.delta
        views[i] = pair.view_b
    return views, deltas


def sce_per_frame(model: PitchModel, dataset: FrameDataset, seed: int, epoch: int,
                  delta_max: int = 15, batch: int = 256) -> np.ndarray:
    views, deltas = shift_views(dataset, seed, epoch, delta_max)
    out = np.empty(len(dataset))
    for s in range(0, len(dataset), batch):
        sl = slice(s, s + batch)
        y = model.predict(dataset.frames[sl], batch=batch)
        y2 = model.predict(views[sl], batch=batch)
        out[sl] = loss_sce(y.astype(np.float64), y2.astype(np.float64), deltas[sl]).data
    return out


def e_step(model: PitchModel, dataset: FrameDataset, table: SampleWeightTable, epoch: int,
           seed: int = 0, delta_max: int = 15) -> SampleWeightTable:
    """Score every frame with SCE and shrink its weight by ``lambda(epoch) * score``."""
    if len(dataset) == 0:
        raise ValueError("e_step needs a non-empty dataset")
    if len(table) != len(dataset):
        raise ValueError("weight table and dataset differ in length")
    scores = normalize_sce(sce_per_frame(model, dataset, seed, epoch, delta_max))
    lam = lambda_anneal(epoch)
    return SampleWeightTable(list(table.clips), table.frames.copy(),
                             apply_weight_update(table.weights, scores, lam), scores)


def silent_gradient_norm(model: PitchModel, n_frames: int = 4, delta: int = 7) -> float:
    """Parameter-gradient norm of SCE on all-zero frames."""
    x = np.zeros((n_frames, model.cfg.input_bins))
    xb = shift_frame(x, delta)
    for p in model.params.values():
        p.zero_grad()
    y = model(np.concatenate([x, xb]))
    ya = ops.getitem(y, slice(0, n_frames))
    yb = ops.getitem(y, slice(n_frames, 2 * n_frames))
    ops.sum(loss_sce(ya, yb, delta)).backward()
    sq = sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in model.params.values())
    for p in model.params.values():
        p.zero_grad()
    return math.sqrt(sq)


def calibration_offset(model: PitchModel, cqt_cfg: CqtConfig = CqtConfig(),
                       midi=range(50, 92, 3)) -> int:
    """Median bin error of the model on steady synthetic harmonic tones.

    Pitch learned from transposed pairs is defined up to a constant bin
    offset; the returned value, passed to :func:`shift_output`, removes it.
    """
    errors = []
    for i, m in enumerate(midi):
        spec = StemSpec([Note(0.0, 0.5, float(m), 0.8)], duration=0.5, n_harmonics=8)
        clip, track = generate_stem(spec, seed=10_000 + i)
        values = compute_cqt(clip, cqt_cfg).values
        mid = slice(10, len(values) - 10)
        est = decode_pitch(softmax_rows(model.predict(values[mid])), cqt_cfg=cqt_cfg)
        errors.append(est.bin - hz_to_bin(track.f0_hz[mid], cqt_cfg))
    return int(np.round(np.median(np.concatenate(errors))))


def _plateau(history, k) -> bool:
    if len(history) < 2 * k:
        return False
    prev, last = np.mean(history[-2 * k:-k]), np.mean(history[-k:])
    return bool(abs(prev - last) <= 0.01 * abs(prev))


def _checkpoint(model, out_dir, epoch):
    path = Path(out_dir) / f"model_e{epoch:03d}.plck"
    model.save(path)
    return path


def train(dataset: FrameDataset, cfg: TrainConfig = TrainConfig(), out_dir=None,
          log_path=None, model: PitchModel | None = None, progress=None):
    """Run warm-up, then alternate E-steps and weighted M-steps.

    Returns ``(model, weight_table, records)``. With ``out_dir`` a checkpoint
    is written every ``cfg.checkpoint_every`` epochs; with ``log_path`` each
    epoch record is appended as one JSON line.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    model = model or init_model(cfg.model)
    opt = Adam(model.params, lr=cfg.lr)
    table = SampleWeightTable.initial(dataset)
    records, totals = [], []
    last_ckpt = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "w") if log_path is not None else None
    n = len(dataset)
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lam = 0.0
            if epoch >= cfg.k_epochs and epoch % cfg.k_epochs == 0:
                lam = lambda_anneal(epoch)
                table = e_step(model, dataset, table, epoch, cfg.seed, cfg.delta_max)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            sums = np.zeros(4)
            for s in range(0, n, cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                pairs = [augment_pair(dataset.frames[i], cfg.seed, epoch, int(i),
                                      delta_max=cfg.delta_max) for i in idx]
                xa = np.stack([p.view_a for p in pairs])
                xb = np.stack([p.view_b for p in pairs])
                deltas = np.array([p.delta for p in pairs])
                y = model(np.concatenate([xa, xb]))
                m = len(idx)
                br = total_loss(ops.getitem(y, slice(0, m)), ops.getitem(y, slice(m, 2 * m)),
                                deltas, table.weights[idx])
                if not np.isfinite(br.total.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}", last_ckpt)
                opt.zero_grad()
                br.total.backward()
                opt.step()
                sums += [float(br.total.data) * m, br.equiv.sum(), br.invar.sum(), br.sce.sum()]
            means = sums / n
            totals.append(means[0])
            rec = {
                "epoch": epoch,
                "loss": float(means[0]), "equiv": float(means[1]),
                "invar": float(means[2]), "sce": float(means[3]),
                "lambda": lam,
                "weight_deciles": table.deciles(),
                "silent_grad_norm": silent_gradient_norm(model) if epoch >= cfg.k_epochs else None,
                "plateau": _plateau(totals, cfg.k_epochs),
                "seconds": round(time.perf_counter() - t0, 3),
            }
            records.append(rec)
            if log_fh:
                log_fh.write(json.dumps({k: v for k, v in rec.items() if k != "seconds"}) + "\n")
                log_fh.flush()
            if progress:
                progress(rec)
            log.info("epoch %d loss %.4f sce %.4f", epoch, means[0], means[3])
            if out_dir is not None and (epoch + 1) % cfg.checkpoint_every == 0:
                last_ckpt = _checkpoint(model, out_dir, epoch + 1)
    finally:
        if log_fh:
            log_fh.close()

    if cfg.calibrate and cfg.epochs > 0:
        offset = calibration_offset(model)
        model = shift_output(model, offset)
        records.append({"calibration_offset": offset})
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(records[-1]) + "\n")
    return model, table, records


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["model"] = asdict(cfg.model)
    return d
