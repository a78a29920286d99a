"""Pseudo-labelled linear voicing classifier on raw log-CQT frames."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, ShapeError, Tensor, load_checkpoint, ops, parameter, save_checkpoint
from .autodiff.ops import _sigmoid

DEFAULT_THETA = 0.5


class ClassBalanceError(ValueError):
    """Training labels contain a single class."""


@dataclass
class PseudoLabelSet:
    clips: list
    frames: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    @property
    def counts(self) -> dict:
        n_pos = int(self.labels.sum())
        return {"voiced": n_pos, "unvoiced": len(self.labels) - n_pos}


@dataclass
class VoicingConfig:
    epochs: int = 200
    lr: float = 1e-2
    seed: int = 0


@dataclass
class VoicingClassifier:
    w: np.ndarray
    b: float

    def logits(self, frames) -> np.ndarray:
        x = np.asarray(frames, dtype=np.float64)
        if x.shape[-1] != len(self.w):
            raise ShapeError("predict_voicing", x.shape, self.w.shape)
        return x @ self.w + self.b

    def save(self, path):
        save_checkpoint(path, {"voicing.w": self.w, "voicing.b": np.array([self.b])})

    @classmethod
    def load(cls, path):
        state = load_checkpoint(path)
        if set(state) != {"voicing.w", "voicing.b"}:
            raise ValueError(f"{path}: not a voicing checkpoint (tensors {sorted(state)})")
        return cls(state["voicing.w"].astype(np.float64), float(state["voicing.b"][0]))


def pseudo_labels(table, theta: float = DEFAULT_THETA) -> PseudoLabelSet:
    """``v* = 1`` iff ``w > theta`` (strict)."""
    if not 0 < theta < 1:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    w = np.asarray(table.weights, dtype=np.float64)
    labels = (w > theta).astype(np.int64)
    if not labels.any():
        warnings.warn("every pseudo-label is 0 (no weight above theta)", stacklevel=2)
    return PseudoLabelSet(list(table.clips), np.asarray(table.frames), labels, w)


def bce_with_logits(logits: Tensor, labels, sample_weights) -> Tensor:
    """Weighted mean of ``softplus(z) - y z``."""
    y = np.asarray(labels, dtype=logits.dtype)
    per = ops.sub(ops.softplus(logits), ops.mul(logits, y))
    sw = np.asarray(sample_weights, dtype=logits.dtype)
    return ops.affine(ops.sum(ops.mul(per, sw)), 1.0 / float(sw.sum()))


def class_weights(labels) -> np.ndarray:
    """Inverse-frequency weights; each class gets half the total mass."""
    labels = np.asarray(labels)
    n, n_pos = len(labels), int(labels.sum())
    return np.where(labels == 1, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def train_voicing(frames, labels, cfg: VoicingConfig = VoicingConfig()) -> VoicingClassifier:
    """Full-batch Adam on class-balanced BCE, from zero initialization."""
    x = np.asarray(frames, dtype=np.float64)
    y = np.asarray(labels.labels if isinstance(labels, PseudoLabelSet) else labels)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError("train_voicing", x.shape, y.shape)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ClassBalanceError(f"need both classes, got {n_pos} voiced of {len(y)}")
    sw = class_weights(y)
    params = {"voicing.w": parameter(np.zeros(x.shape[1]), "voicing.w"),
              "voicing.b": parameter(np.zeros(1), "voicing.b")}
    opt = Adam(params, lr=cfg.lr)
    xt = Tensor(x)
    for _ in range(cfg.epochs):
        z = ops.add(ops.matmul(xt, params["voicing.w"]),
                    ops.sum(params["voicing.b"]))
        loss = bce_with_logits(z, y, sw)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return VoicingClassifier(params["voicing.w"].data.copy(), float(params["voicing.b"].data[0]))


def predict_voicing(clf: VoicingClassifier, frames):
    """``(probability, flag)`` with ``flag = probability > 0.5``."""
    prob = _sigmoid(clf.logits(frames))
    return prob, prob > 0.5


def f1_score(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    tp = np.sum(pred & truth)
    denom = 2 * tp + np.sum(pred & ~truth) + np.sum(~pred & truth)
    return float(2 * tp / denom) if denom else 1.0
