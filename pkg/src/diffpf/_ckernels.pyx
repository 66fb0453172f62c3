# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``diffpf._kernels_py``.

Same signatures and results; accumulation orders mirror the numpy code so
im2col/col2im/render_disks are bit-identical to the fallback.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t ncol = C * kh * kw
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((B * Ho * Wo, ncol), dtype=dtype)
    cdef real[:, ::1] o = out
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, row, col
    with nogil:
        for b in range(B):
            for oy in range(Ho):
                for ox in range(Wo):
                    row = (b * Ho + oy) * Wo + ox
                    col = 0
                    for c in range(C):
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if 0 <= iy < H and 0 <= ix < W:
                                    o[row, col] = x[b, c, iy, ix]
                                col += 1
    return out


def col2im(real[:, ::1] cols, shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = shape[0], C = shape[1], H = shape[2], W = shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((B, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, row
    # (i, j) outermost per pixel so each pixel accumulates in kernel-offset
    # order, matching the fallback's slice-add loop
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        for oy in range(Ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for ox in range(Wo):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= W:
                                    continue
                                row = (b * Ho + oy) * Wo + ox
                                o[b, c, iy, ix] += cols[row, (c * kh + i) * kw + j]
    return out


def splat(double[:, :, ::1] points, int size, double bandwidth):
    cdef Py_ssize_t B = points.shape[0], N = points.shape[1]
    out = np.zeros((B, size, size), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double inv = 1.0 / (2.0 * bandwidth * bandwidth)
    gx_arr = np.empty(size, dtype=np.float64)
    gy_arr = np.empty(size, dtype=np.float64)
    cdef double[::1] gx = gx_arr
    cdef double[::1] gy = gy_arr
    cdef Py_ssize_t b, n, r, c
    cdef double d
    with nogil:
        for b in range(B):
            for n in range(N):
                for c in range(size):
                    d = c - points[b, n, 0]
                    gx[c] = exp(-(d * d) * inv)
                for r in range(size):
                    d = r - points[b, n, 1]
                    gy[r] = exp(-(d * d) * inv)
                for r in range(size):
                    for c in range(size):
                        o[b, r, c] += gy[r] * gx[c]
            for r in range(size):
                for c in range(size):
                    o[b, r, c] /= N
    return out


def render_disks(double[:, :, ::1] img, double[:, ::1] centers, double[::1] radii,
                 double[:, ::1] colors, double scale, double offset):
    cdef Py_ssize_t H = img.shape[1], W = img.shape[2], M = centers.shape[0]
    cdef Py_ssize_t m, r, c, r0, r1, c0, c1
    cdef double cx, cy, rad, dx, dy, px, py
    with nogil:
        for m in range(M):
            cx = centers[m, 0]
            cy = centers[m, 1]
            rad = radii[m]
            # bounding box in pixel indices, padded by one for safety
            c0 = <Py_ssize_t>((cx - rad + offset) / scale) - 1
            c1 = <Py_ssize_t>((cx + rad + offset) / scale) + 2
            r0 = <Py_ssize_t>((cy - rad + offset) / scale) - 1
            r1 = <Py_ssize_t>((cy + rad + offset) / scale) + 2
            if c0 < 0:
                c0 = 0
            if r0 < 0:
                r0 = 0
            if c1 > W:
                c1 = W
            if r1 > H:
                r1 = H
            for r in range(r0, r1):
                py = (r + 0.5) * scale - offset
                dy = py - cy
                for c in range(c0, c1):
                    px = (c + 0.5) * scale - offset
                    dx = px - cx
                    if dx * dx + dy * dy <= rad * rad:
                        img[0, r, c] = colors[m, 0]
                        img[1, r, c] = colors[m, 1]
                        img[2, r, c] = colors[m, 2]
    return np.asarray(img)
