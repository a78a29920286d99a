"""Differentiable operations.

Every op takes Tensors (or plain arrays / Python scalars for constants) and
returns a new Tensor whose ``_backward`` closure returns one gradient per
parent. Broadcasting is limited to scalar-with-tensor.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels
from .tensor import ShapeError, Tensor, as_tensor


def _result(data, parents, backward, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


def _pair(a, b, op):
    if isinstance(a, Tensor):
        b = as_tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor):
        a = as_tensor(a, dtype=b.dtype)
    else:
        a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(op, a.shape, b.shape)
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# --- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), backward, "div")


def affine(x, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * x + shift`` with Python-scalar coefficients."""
    x = as_tensor(x)
    s = x.dtype.type(scale)

    def backward(g):
        return (g * s,)

    return _result(x.data * s + x.dtype.type(shift), (x,), backward, "affine")


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def backward(g):
        return (g * np.sign(x.data),)

    return _result(np.abs(x.data), (x,), backward, "abs")


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (out > 0),)

    return _result(out, (x,), backward, "relu")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0, x.data).astype(x.dtype)

    def backward(g):
        return (g * _sigmoid(x.data),)

    return _result(out, (x,), backward, "softplus")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)

    def backward(g):
        return (g * out * (1 - out),)

    return _result(out, (x,), backward, "sigmoid")


def sin(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g * np.cos(x.data),)

    return _result(np.sin(x.data), (x,), backward, "sin")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _result(out, (x,), backward, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward, "log")


def square(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (2 * g * x.data,)

    return _result(x.data * x.data, (x,), backward, "square")


def huber(x, delta: float = 1.0) -> Tensor:
    x = as_tensor(x)
    ax = np.abs(x.data)
    quad = ax <= delta
    out = np.where(quad, 0.5 * x.data * x.data, delta * (ax - 0.5 * delta)).astype(x.dtype)

    def backward(g):
        return (g * np.where(quad, x.data, delta * np.sign(x.data)),)

    return _result(out, (x,), backward, "huber")


# --- reductions and shape ----------------------------------------------------

def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return affine(sum(x, axis=axis), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, "reshape")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    basic = all(isinstance(i, (slice, int)) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(out, (x,), backward, "getitem")


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _result(out, tensors, backward, "concat")


def cumsum(x, axis=-1) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _result(np.cumsum(x.data, axis=axis), (x,), backward, "cumsum")


def roll(x, shifts, axis=-1) -> Tensor:
    """Circular shift along ``axis``.

    ``shifts`` may be an int or, for 2-D input rolled along the last axis,
    one integer per row.
    """
    x = as_tensor(x)
    if np.ndim(shifts) == 0:
        s = int(shifts)

        def backward(g):
            return (np.roll(g, -s, axis=axis),)

        return _result(np.roll(x.data, s, axis=axis), (x,), backward, "roll")

    shifts = np.asarray(shifts, dtype=np.int64)
    if x.ndim != 2 or axis not in (-1, 1) or len(shifts) != x.shape[0]:
        raise ShapeError("roll", x.shape, shifts.shape, detail="per-row shifts need 2-D input")
    n = x.shape[1]
    cols = (np.arange(n)[None, :] - shifts[:, None]) % n
    rows = np.arange(x.shape[0])[:, None]

    def backward(g):
        back = (np.arange(n)[None, :] + shifts[:, None]) % n
        return (g[rows, back],)

    return _result(x.data[rows, cols], (x,), backward, "roll")


# --- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def _pad_length(x, padding, mode):
    """Pad axis 1 of an (N, L, C) array."""
    if not padding:
        return x
    n, length, c = x.shape
    out = np.empty((n, length + 2 * padding, c), dtype=x.dtype)
    out[:, padding:padding + length] = x
    if mode == "circular":
        out[:, :padding] = x[:, length - padding:]
        out[:, padding + length:] = x[:, :padding]
    else:
        out[:, :padding] = 0
        out[:, padding + length:] = 0
    return out


def _fold_padding(gxp, padding, length, mode):
    """Adjoint of :func:`_pad_length`."""
    if not padding:
        return gxp
    gx = gxp[:, padding:padding + length].copy()
    if mode == "circular":
        gx[:, length - padding:] += gxp[:, :padding]
        gx[:, :padding] += gxp[:, padding + length:]
    return gx


def conv1d(x, w, b=None, stride=1, padding=0, groups=1, padding_mode="zeros") -> Tensor:
    """Grouped 1-D convolution (cross-correlation) along the length axis.

    Activations are channels-last: x is (N, L, C_in) and the result is
    (N, L_out, C_out). w is (C_out, C_in // groups, k) and b is (C_out,) or
    None. ``padding_mode`` is ``"zeros"`` or ``"circular"``.

    With stride 1 every tap is one GEMM on a shifted view of the flattened
    padded input, so no im2col buffer is built.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError("conv1d", x.shape, w.shape, detail="expected (N,L,C) and (O,C/g,k)")
    if padding_mode not in ("zeros", "circular"):
        raise ValueError(f"padding_mode must be 'zeros' or 'circular', got {padding_mode!r}")
    n, length, cin = x.shape
    cout, cg, k = w.shape
    if groups < 1 or cin % groups or cout % groups or cg * groups != cin:
        raise ShapeError("conv1d", x.shape, w.shape, detail=f"groups={groups}")
    if padding_mode == "circular" and padding > length:
        raise ShapeError("conv1d", x.shape, detail="circular padding longer than input")
    og = cout // groups
    xp = _pad_length(x.data, padding, padding_mode)
    lp = xp.shape[1]
    lout = (lp - k) // stride + 1
    if lout <= 0:
        raise ShapeError("conv1d", x.shape, w.shape, detail="kernel longer than padded input")
    wd = w.data
    dtype = np.result_type(xp, wd)

    if stride == 1:
        wt = np.ascontiguousarray(wd.transpose(2, 1, 0), dtype=dtype)  # (k, cg, cout)
        flat = np.ascontiguousarray(xp.reshape(n * lp, cin), dtype=dtype)
        out_flat = np.zeros((n * lp, cout), dtype=dtype)
        kernels.conv_taps_forward(flat, wt, out_flat, groups, lp, lout)
        out = out_flat.reshape(n, lp, cout)[:, :lout]
        cols = None
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride][:, :lout]
        cols = [win[:, :, g * cg:(g + 1) * cg, :].reshape(n * lout, cg * k) for g in range(groups)]
        out = np.concatenate([cols[g] @ wd[g * og:(g + 1) * og].reshape(og, cg * k).T
                              for g in range(groups)], axis=1).reshape(n, lout, cout)
    out = np.ascontiguousarray(out)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError("conv1d", w.shape, b.shape, detail="bias")
        out += b.data
        parents.append(b)

    def backward(g):
        gw = None
        if w.requires_grad:
            gw = np.zeros((k, cg, cout), dtype=dtype) if stride == 1 else np.zeros_like(wd)
        gxp = np.zeros((n, lp, cin), dtype=dtype) if x.requires_grad else None
        if stride == 1:
            gpad = np.zeros((n * lp, cout), dtype=dtype)
            gpad.reshape(n, lp, cout)[:, :lout] = g
            gflat = gxp.reshape(n * lp, cin) if gxp is not None else None
            kernels.conv_taps_backward(flat, wt, gpad, gw, gflat, groups, lp, lout)
            if gw is not None:
                gw = np.ascontiguousarray(gw.transpose(2, 1, 0))
        else:
            g2 = g.reshape(n * lout, cout)
            for gi in range(groups):
                so = slice(gi * og, (gi + 1) * og)
                go = g2[:, so]
                if gw is not None:
                    gw[so] = (cols[gi].T @ go).T.reshape(og, cg, k)
                if gxp is not None:
                    gc = (go @ wd[so].reshape(og, cg * k)).reshape(n, lout, cg, k)
                    for j in range(k):
                        gxp[:, j:j + stride * (lout - 1) + 1:stride, gi * cg:(gi + 1) * cg] += gc[..., j]
        gx = None if gxp is None else _fold_padding(gxp, padding, length, padding_mode)
        grads = [gx, gw]
        if b is not None:
            # per-sample sums first, then samples in batch order
            grads.append(g.sum(axis=1).sum(axis=0) if b.requires_grad else None)
        return tuple(grads)

    return _result(out, parents, backward, "conv1d")


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) of an (N, L, C) tensor over L.

    No affine part. Values are shifted by the first element before the mean is
    taken, so a constant row maps to exact zeros.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("instance_norm", x.shape)
    xhat, inv = kernels.instance_norm_forward(np.ascontiguousarray(x.data), eps)

    def backward(g):
        return (kernels.instance_norm_backward(np.ascontiguousarray(g, dtype=xhat.dtype), xhat, inv),)

    return _result(xhat, (x,), backward, "instance_norm")


# --- probability ---------------------------------------------------------------

def _log_softmax(v, axis):
    m = v.max(axis=axis, keepdims=True)
    z = v - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    out = np.exp(_log_softmax(x.data, axis))

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    out = _log_softmax(x.data, axis)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def cross_entropy(logits, target) -> Tensor:
    """Row-wise soft-target cross-entropy ``-sum_k q_k log softmax(y)_k``.

    ``target`` is treated as a constant; its gradient is never propagated.
    For 1-D logits the result is a scalar, for (N, K) logits a length-N vector.
    """
    y = as_tensor(logits)
    q = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=y.dtype)
    if q.shape != y.shape:
        raise ShapeError("cross_entropy", y.shape, q.shape)
    ls = _log_softmax(y.data, -1)
    out = -(q * ls).sum(axis=-1)

    def backward(g):
        p = np.exp(ls)
        gg = np.expand_dims(g, -1)
        return (gg * (p * q.sum(axis=-1, keepdims=True) - q),)

    return _result(out, (y,), backward, "cross_entropy")


# --- resampling ---------------------------------------------------------------

def _frame_positions(n_frames, n_out, hop):
    pos = np.arange(n_out) / hop
    j = np.minimum(np.floor(pos).astype(np.int64), n_frames - 1)
    frac = np.where(j < n_frames - 1, pos - j, 0.0)
    return j, frac


def upsample_linear(x, n_out: int, hop: int) -> Tensor:
    """Linear interpolation of (C, T) frame-rate rows to ``n_out`` samples.

    Frame ``t`` sits at sample ``t * hop``; samples past the last frame hold
    its value.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("upsample_linear", x.shape)
    c, t = x.shape
    j, frac = _frame_positions(t, n_out, hop)
    j1 = np.minimum(j + 1, t - 1)
    frac = frac.astype(x.dtype)
    out = x.data[:, j] * (1 - frac) + x.data[:, j1] * frac

    def backward(g):
        offs = (np.arange(c) * t)[:, None]
        gx = np.bincount((offs + j).ravel(), weights=(g * (1 - frac)).ravel(), minlength=c * t)
        gx += np.bincount((offs + j1).ravel(), weights=(g * frac).ravel(), minlength=c * t)
        return (gx.reshape(c, t).astype(x.dtype),)

    return _result(out, (x,), backward, "upsample_linear")


def upsample_nearest(x, n_out: int, hop: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("upsample_nearest", x.shape)
    c, t = x.shape
    idx = np.minimum(np.floor(np.arange(n_out) / hop + 0.5).astype(np.int64), t - 1)
    out = x.data[:, idx]

    def backward(g):
        offs = (np.arange(c) * t)[:, None]
        gx = np.bincount((offs + idx).ravel(), weights=g.ravel(), minlength=c * t)
        return (gx.reshape(c, t).astype(x.dtype),)

    return _result(out, (x,), backward, "upsample_nearest")


# --- spectral ------------------------------------------------------------------

_DFT_CACHE: dict = {}


def dft_matrices(n_fft: int, dtype=np.float64):
    """Hann-windowed real DFT as two (n_fft, n_fft//2+1) matrices."""
    key = (n_fft, np.dtype(dtype).str)
    if key not in _DFT_CACHE:
        n = np.arange(n_fft)
        window = 0.5 - 0.5 * np.cos(2 * np.pi * n / n_fft)
        ang = 2 * np.pi * np.outer(n, np.arange(n_fft // 2 + 1)) / n_fft
        _DFT_CACHE[key] = ((window[:, None] * np.cos(ang)).astype(dtype),
                           (-window[:, None] * np.sin(ang)).astype(dtype))
    return _DFT_CACHE[key]


def stft_magnitude(x, n_fft: int, hop: int) -> Tensor:
    """|STFT| of a 1-D signal via the matrix DFT; returns (frames, n_fft//2+1).

    The signal is zero-padded by ``n_fft // 2`` on both sides so frames are
    centred on multiples of ``hop``.
    """
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError("stft_magnitude", x.shape)
    pad = n_fft // 2
    xp = np.pad(x.data, (pad, pad))
    frames = np.ascontiguousarray(sliding_window_view(xp, n_fft)[::hop])
    n_frames = frames.shape[0]
    cmat, smat = dft_matrices(n_fft, x.dtype)
    re = frames @ cmat
    im = frames @ smat
    mag = np.sqrt(re * re + im * im)

    def backward(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(mag > 0, g / mag, 0.0)
        gframes = (scale * re) @ cmat.T + (scale * im) @ smat.T
        gxp = kernels.overlap_add(np.ascontiguousarray(gframes, dtype=np.float64), hop, len(xp))
        return (gxp[pad:pad + len(x.data)].astype(x.dtype),)

    return _result(mag, (x,), backward, "stft_magnitude")
