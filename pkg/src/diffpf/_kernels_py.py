"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``diffpf._ckernels`` (Cython) must agree
with them. Both operate on C-contiguous float arrays.
"""

import numpy as np


def im2col(x, kh, kw, stride, pad):
    """(B, C, H, W) -> (B * Ho * Wo, C * kh * kw), column order (c, ki, kj)."""
    B, C, H, W = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + H, pad:pad + W] = x
    else:
        xp = x
    cols = np.empty((B, Ho, Wo, C, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                       j:j + stride * (Wo - 1) + 1:stride]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(B * Ho * Wo, C * kh * kw)


def col2im(cols, shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back into an image."""
    B, C, H, W = shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    c6 = cols.reshape(B, Ho, Wo, C, kh, kw)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * (Ho - 1) + 1:stride,
               j:j + stride * (Wo - 1) + 1:stride] += c6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])
    return xp


def splat(points, size, bandwidth):
    """Sum of isotropic Gaussian bumps.

    points: (B, N, 2) in grid coordinates (col, row), cell centres at integers.
    Returns (B, size, size) float64, averaged over the N points.
    """
    B, N, _ = points.shape
    grid = np.arange(size, dtype=np.float64)
    inv = 1.0 / (2.0 * bandwidth * bandwidth)
    out = np.zeros((B, size, size), dtype=np.float64)
    for n in range(N):
        gx = np.exp(-((grid[None, :] - points[:, n, 0:1]) ** 2) * inv)
        gy = np.exp(-((grid[None, :] - points[:, n, 1:2]) ** 2) * inv)
        out += gy[:, :, None] * gx[:, None, :]
    return out / N


def render_disks(img, centers, radii, colors, scale, offset):
    """Paint filled disks onto ``img`` (3, H, W) in the given order, in place.

    Pixel (r, c) sits at world coordinates ((c + 0.5) * scale - offset,
    (r + 0.5) * scale - offset); a pixel is covered when its centre lies
    within the disk radius.
    """
    _, H, W = img.shape
    xs = (np.arange(W) + 0.5) * scale - offset
    ys = (np.arange(H) + 0.5) * scale - offset
    for m in range(centers.shape[0]):
        cx, cy = centers[m]
        r = radii[m]
        mask = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= r * r
        for ch in range(3):
            img[ch][mask] = colors[m, ch]
    return img
