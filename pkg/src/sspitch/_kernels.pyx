# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. ``sspitch._kernels_py`` holds the numpy equivalents."""

import numpy as np
from cython.parallel import prange
from libc.math cimport sqrt


def cqt_direct(const double[::1] xpad, const double[::1] kr, const double[::1] ki,
               const long long[::1] offsets, const long long[::1] lengths,
               const long long[::1] starts, long long hop, long long n_frames):
    """Magnitude of per-bin windowed DFTs at frame centres ``t * hop``.

    Bin ``k`` uses ``lengths[k]`` kernel taps stored from ``offsets[k]`` in
    ``kr``/``ki`` and reads ``xpad`` from ``t * hop + starts[k]``.
    Each (frame, bin) cell is independent, so the result does not depend on
    the thread count.
    """
    cdef Py_ssize_t n_bins = lengths.shape[0]
    out = np.empty((n_frames, n_bins), dtype=np.float64)
    cdef double[:, ::1] mag = out
    cdef Py_ssize_t t, k, n, base, off, ln, n4
    cdef double r0, r1, r2, r3, i0, i1, i2, i3, v0, v1, v2, v3, re, im
    for t in prange(n_frames, nogil=True, schedule="static"):
        for k in range(n_bins):
            base = t * hop + starts[k]
            off = offsets[k]
            ln = lengths[k]
            n4 = ln - ln % 4
            r0 = 0.0
            r1 = 0.0
            r2 = 0.0
            r3 = 0.0
            i0 = 0.0
            i1 = 0.0
            i2 = 0.0
            i3 = 0.0
            for n in range(0, n4, 4):
                v0 = xpad[base + n]
                v1 = xpad[base + n + 1]
                v2 = xpad[base + n + 2]
                v3 = xpad[base + n + 3]
                r0 = r0 + v0 * kr[off + n]
                r1 = r1 + v1 * kr[off + n + 1]
                r2 = r2 + v2 * kr[off + n + 2]
                r3 = r3 + v3 * kr[off + n + 3]
                i0 = i0 + v0 * ki[off + n]
                i1 = i1 + v1 * ki[off + n + 1]
                i2 = i2 + v2 * ki[off + n + 2]
                i3 = i3 + v3 * ki[off + n + 3]
            for n in range(n4, ln):
                v0 = xpad[base + n]
                r0 = r0 + v0 * kr[off + n]
                i0 = i0 + v0 * ki[off + n]
            re = (r0 + r1) + (r2 + r3)
            im = (i0 + i1) + (i2 + i3)
            mag[t, k] = sqrt(re * re + im * im)
    return out


def overlap_add(double[:, ::1] frames, long long hop, long long length):
    """Sum rows of ``frames`` into a signal, row ``i`` starting at ``i * hop``."""
    cdef Py_ssize_t n_frames = frames.shape[0], width = frames.shape[1]
    out = np.zeros(length, dtype=np.float64)
    cdef double[::1] acc = out
    cdef Py_ssize_t i, j, base
    for i in range(n_frames):
        base = i * hop
        for j in range(width):
            acc[base + j] += frames[i, j]
    return out


# --- grouped convolution taps -------------------------------------------------
# Row-major products are issued as column-major GEMMs on the transposes, with
# leading dimensions pointing into strided channel slices, so no slice is ever
# copied and results accumulate in place (beta = 1).

from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real* a, int lda,
                       real* b, int ldb, real beta, real* c, int ldc) noexcept nogil:
    cdef float sa = 1.0, sbeta = <float>beta
    cdef double da = 1.0, dbeta = <double>beta
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &sa, a, &lda, b, &ldb, &sbeta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &da, a, &lda, b, &ldb, &dbeta, c, &ldc)


def conv_taps_forward(real[:, ::1] flat, real[:, :, ::1] wt, real[:, ::1] out, int groups,
                      int sample_rows, int valid_rows):
    """``out[r, so] += sum_j flat[r + j, si] @ wt[j, :, so]`` for every group.

    ``flat`` is (R, C_in) holding samples of ``sample_rows`` rows each, ``wt``
    is (k, C_in / groups, C_out) and ``out`` is (R, C_out); the first
    ``valid_rows`` rows of each sample are written.

    Every GEMM covers a single sample, so a sample's output does not depend
    on the batch it sits in.
    """
    cdef int k = wt.shape[0], cg = wt.shape[1], cout = wt.shape[2], cin = flat.shape[1]
    cdef int og = cout // groups, n_s = flat.shape[0] // sample_rows
    cdef int g, j, s, r0
    with nogil:
        for s in range(n_s):
            r0 = s * sample_rows
            for g in range(groups):
                for j in range(k):
                    _gemm(c'N', c'N', og, valid_rows, cg, &wt[j, 0, g * og], cout,
                          &flat[r0 + j, g * cg], cin, 1.0, &out[r0, g * og], cout)


def conv_taps_backward(real[:, ::1] flat, real[:, :, ::1] wt, real[:, ::1] gout,
                       real[:, :, ::1] gw, real[:, ::1] gflat, int groups,
                       int sample_rows, int valid_rows):
    """Adjoint of :func:`conv_taps_forward`.

    ``flat`` and ``gout`` hold samples of ``sample_rows`` rows each, of which
    the first ``valid_rows`` carry output gradient. ``gw`` (k, C_in / groups,
    C_out) and ``gflat`` (R, C_in) are accumulated; either may be ``None``.

    Work is done one sample at a time in batch order, so a sample whose
    output gradient is exactly zero leaves ``gw`` bit-identical to a batch
    without that sample.
    """
    cdef int k = wt.shape[0], cg = wt.shape[1], cout = wt.shape[2], cin = flat.shape[1]
    cdef int og = cout // groups, n_s = flat.shape[0] // sample_rows
    cdef int g, j, s, r0
    cdef bint want_w = gw is not None, want_x = gflat is not None
    with nogil:
        for s in range(n_s):
            r0 = s * sample_rows
            for g in range(groups):
                for j in range(k):
                    if want_x:
                        _gemm(c'T', c'N', cg, valid_rows, og, &wt[j, 0, g * og], cout,
                              &gout[r0, g * og], cout, 1.0, &gflat[r0 + j, g * cg], cin)
                    if want_w:
                        _gemm(c'N', c'T', og, cg, valid_rows, &gout[r0, g * og], cout,
                              &flat[r0 + j, g * cg], cin, 1.0, &gw[j, 0, g * og], cout)


# --- instance normalization over the length axis of (N, L, C) ------------------

def instance_norm_forward(real[:, :, ::1] x, double eps):
    """Return ``(xhat, inv)`` with ``xhat = (x - mean) * inv`` per (n, c).

    Values are shifted by ``x[n, 0, c]`` before averaging so constant rows give
    exact zeros. One sample (L x C) stays cache resident across the passes.
    """
    cdef Py_ssize_t n_s = x.shape[0], length = x.shape[1], nc = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    xhat_arr = np.empty((n_s, length, nc), dtype=dtype)
    inv_arr = np.empty((n_s, 1, nc), dtype=dtype)
    cdef real[:, :, ::1] xhat = xhat_arr
    cdef real[:, :, ::1] inv = inv_arr
    cdef real[::1] acc = np.empty(nc, dtype=dtype)
    cdef Py_ssize_t n, l, c
    cdef real v, rl = <real>(1.0 / length), reps = <real>eps
    with nogil:
        for n in range(n_s):
            for c in range(nc):
                acc[c] = 0
            for l in range(length):
                for c in range(nc):
                    v = x[n, l, c] - x[n, 0, c]
                    xhat[n, l, c] = v
                    acc[c] += v
            for c in range(nc):
                acc[c] *= rl
            for l in range(length):
                for c in range(nc):
                    xhat[n, l, c] -= acc[c]
            for c in range(nc):
                acc[c] = 0
            for l in range(length):
                for c in range(nc):
                    acc[c] += xhat[n, l, c] * xhat[n, l, c]
            for c in range(nc):
                inv[n, 0, c] = 1 / <real>sqrt(acc[c] * rl + reps)
            for l in range(length):
                for c in range(nc):
                    xhat[n, l, c] *= inv[n, 0, c]
    return xhat_arr, inv_arr


def instance_norm_backward(real[:, :, ::1] g, real[:, :, ::1] xhat, real[:, :, ::1] inv):
    """``inv * (g - mean(g) - xhat * mean(g * xhat))`` per (n, c)."""
    cdef Py_ssize_t n_s = g.shape[0], length = g.shape[1], nc = g.shape[2]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_s, length, nc), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef real[::1] sg = np.empty(nc, dtype=dtype)
    cdef real[::1] sgx = np.empty(nc, dtype=dtype)
    cdef Py_ssize_t n, l, c
    cdef real rl = <real>(1.0 / length)
    with nogil:
        for n in range(n_s):
            for c in range(nc):
                sg[c] = 0
                sgx[c] = 0
            for l in range(length):
                for c in range(nc):
                    sg[c] += g[n, l, c]
                    sgx[c] += g[n, l, c] * xhat[n, l, c]
            for c in range(nc):
                sg[c] *= rl
                sgx[c] *= rl
            for l in range(length):
                for c in range(nc):
                    out[n, l, c] = inv[n, 0, c] * (g[n, l, c] - sg[c] - xhat[n, l, c] * sgx[c])
    return out_arr
