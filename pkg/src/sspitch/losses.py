"""Self-supervised pitch objectives on pairs of transposed views.

``y`` / ``y2`` are (N, K) logits for the two views of each frame, the second
view being transposed by ``delta`` bins. All per-sample values are returned
as length-N vectors so the trainer can reuse them for reweighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ShapeError, ops

ALPHA = 2.0 ** (1.0 / 36.0)
HUBER_DELTA = 1.0
Z_EPS = 1e-12


class NumericGuardError(ArithmeticError):
    """Raised when a scalar pitch value is too small to divide by."""


@dataclass
class LossBreakdown:
    """Weighted batch total plus the unweighted per-sample components."""

    total: Tensor
    equiv: np.ndarray
    invar: np.ndarray
    sce: np.ndarray

    def means(self) -> dict:
        return {"total": float(self.total.data), "equiv": float(self.equiv.mean()),
                "invar": float(self.invar.mean()), "sce": float(self.sce.mean())}


def pitch_weights(k: int, alpha: float = ALPHA) -> np.ndarray:
    return alpha ** np.arange(k, dtype=np.float64)


def scalar_pitch(p, alpha: float = ALPHA) -> Tensor:
    """``z = sum_k alpha**k p_k`` for each row of ``p`` (scalar for a 1-D ``p``)."""
    p, single = _as_2d(p)
    # row-wise reduction rather than a mat-vec product, so each row's value
    # does not depend on how many rows share the batch
    w = np.broadcast_to(pitch_weights(p.shape[-1], alpha).astype(p.dtype), p.shape)
    return _squeeze(ops.sum(ops.mul(p, w), axis=-1), single)


def _per_row(delta, n) -> np.ndarray:
    d = np.asarray(delta, dtype=np.int64)
    if d.ndim == 0:
        d = np.full(n, int(d))
    if d.shape != (n,):
        raise ShapeError("delta", d.shape, (n,))
    return d


def _as_2d(y) -> tuple[Tensor, bool]:
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
    if y.ndim == 1:
        return ops.reshape(y, (1, y.shape[0])), True
    return y, False


def _squeeze(v: Tensor, single: bool) -> Tensor:
    return ops.reshape(v, ()) if single else v


def loss_equiv(y, y2, delta, alpha: float = ALPHA, huber_delta: float = HUBER_DELTA) -> Tensor:
    """Symmetric Huber penalty on ``z2 / z - alpha**delta`` and its mirror."""
    y, single = _as_2d(y)
    y2, _ = _as_2d(y2)
    if y.shape != y2.shape:
        raise ShapeError("loss_equiv", y.shape, y2.shape)
    d = _per_row(delta, y.shape[0])
    z = scalar_pitch(ops.softmax(y), alpha)
    z2 = scalar_pitch(ops.softmax(y2), alpha)
    if np.any(z.data < Z_EPS) or np.any(z2.data < Z_EPS):
        raise NumericGuardError("scalar pitch below guard threshold")
    a = (alpha ** d.astype(np.float64)).astype(y.dtype)
    fwd = ops.huber(ops.sub(ops.div(z2, z), a), huber_delta)
    bwd = ops.huber(ops.sub(ops.div(z, z2), (1.0 / a).astype(y.dtype)), huber_delta)
    return _squeeze(ops.affine(ops.add(fwd, bwd), 0.5), single)


def loss_invar(y, y2) -> Tensor:
    """``(CE(y, p2) + CE(y2, p)) / 2`` with detached targets."""
    y, single = _as_2d(y)
    y2, _ = _as_2d(y2)
    if y.shape != y2.shape:
        raise ShapeError("loss_invar", y.shape, y2.shape)
    p = ops.softmax(y).data
    p2 = ops.softmax(y2).data
    out = ops.add(ops.cross_entropy(y, p2), ops.cross_entropy(y2, p))
    return _squeeze(ops.affine(out, 0.5), single)


def _roll_rows(a: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    k = a.shape[1]
    cols = (np.arange(k)[None, :] - shifts[:, None]) % k
    return a[np.arange(a.shape[0])[:, None], cols]


def loss_sce(y, y2, delta) -> Tensor:
    """Shift cross-entropy with circular rolls of the detached targets.

    ``(CE(y2, roll(p, delta)) + CE(y, roll(p2, -delta))) / 2``.
    """
    y, single = _as_2d(y)
    y2, _ = _as_2d(y2)
    if y.shape != y2.shape:
        raise ShapeError("loss_sce", y.shape, y2.shape)
    d = _per_row(delta, y.shape[0])
    p = ops.softmax(y).data
    p2 = ops.softmax(y2).data
    out = ops.add(ops.cross_entropy(y2, _roll_rows(p, d)),
                  ops.cross_entropy(y, _roll_rows(p2, -d)))
    return _squeeze(ops.affine(out, 0.5), single)


def total_loss(y, y2, delta, weights, alpha: float = ALPHA) -> LossBreakdown:
    """``(1/N) sum_i w_i (equiv_i + invar_i + sce_i)`` over a batch of pairs."""
    y, _ = _as_2d(y)
    y2, _ = _as_2d(y2)
    n = y.shape[0]
    w = np.asarray(weights, dtype=y.dtype)
    if w.shape != (n,):
        raise ShapeError("total_loss", (n,), w.shape, detail="one weight per pair")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    eq = loss_equiv(y, y2, delta, alpha)
    inv = loss_invar(y, y2)
    sce = loss_sce(y, y2, delta)
    per = ops.add(ops.add(eq, inv), sce)
    total = ops.affine(ops.sum(ops.mul(per, w)), 1.0 / n)
    return LossBreakdown(total, eq.data.copy(), inv.data.copy(), sce.data.copy())
