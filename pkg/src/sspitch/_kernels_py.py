"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_CHUNK_ELEMS = 1 << 22


def cqt_direct(xpad, kr, ki, offsets, lengths, starts, hop, n_frames):
    n_bins = len(lengths)
    out = np.empty((n_frames, n_bins), dtype=np.float64)
    for k in range(n_bins):
        off, ln, st = int(offsets[k]), int(lengths[k]), int(starts[k])
        kern = np.stack([kr[off:off + ln], ki[off:off + ln]], axis=1)
        view = sliding_window_view(xpad[st:], ln)[::hop]
        step = max(1, _CHUNK_ELEMS // ln)
        for t0 in range(0, n_frames, step):
            t1 = min(n_frames, t0 + step)
            ri = np.ascontiguousarray(view[t0:t1]) @ kern
            out[t0:t1, k] = np.hypot(ri[:, 0], ri[:, 1])
    return out


def overlap_add(frames, hop, length):
    n_frames, width = frames.shape
    out = np.zeros(length, dtype=np.float64)
    span = hop * (n_frames - 1) + 1
    for j in range(width):
        out[j:j + span:hop] += frames[:, j]
    return out


def conv_taps_forward(flat, wt, out, groups, sample_rows, valid_rows):
    k, cg, cout = wt.shape
    og = cout // groups
    tmp = np.empty((valid_rows, og), dtype=out.dtype)
    for r0 in range(0, flat.shape[0], sample_rows):
        for g in range(groups):
            si, so = slice(g * cg, (g + 1) * cg), slice(g * og, (g + 1) * og)
            acc = out[r0:r0 + valid_rows, so]
            for j in range(k):
                np.matmul(flat[r0 + j:r0 + j + valid_rows, si], wt[j, :, so], out=tmp)
                acc += tmp


def conv_taps_backward(flat, wt, gout, gw, gflat, groups, sample_rows, valid_rows):
    k, cg, cout = wt.shape
    og = cout // groups
    # one sample at a time, in batch order (see the compiled kernel)
    for r0 in range(0, flat.shape[0], sample_rows):
        for g in range(groups):
            si, so = slice(g * cg, (g + 1) * cg), slice(g * og, (g + 1) * og)
            go = gout[r0:r0 + valid_rows, so]
            for j in range(k):
                if gflat is not None:
                    gflat[r0 + j:r0 + j + valid_rows, si] += go @ wt[j, :, so].T
                if gw is not None:
                    gw[j, :, so] += flat[r0 + j:r0 + j + valid_rows, si].T @ go


def instance_norm_forward(x, eps):
    xc = x - x[:, :1]
    xc -= xc.mean(axis=1, keepdims=True)
    inv = np.square(xc).mean(axis=1, keepdims=True)
    inv += x.dtype.type(eps)
    np.sqrt(inv, out=inv)
    np.reciprocal(inv, out=inv)
    xc *= inv
    return xc, inv


def instance_norm_backward(g, xhat, inv):
    gm = g.mean(axis=1, keepdims=True)
    gxm = (g * xhat).mean(axis=1, keepdims=True)
    out = g - gm
    out -= xhat * gxm
    out *= inv
    return out
