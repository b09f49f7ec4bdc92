# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot data-movement kernels.

Same four functions and the same (c, ki, kj)-major patch layout as
numpy_backend, written as C loops over typed memoryviews. im2col_one and
col2im_one fold the one-pixel zero border into the loop bounds instead of
materializing a padded copy, and accept a preallocated output buffer so a
batch loop can reuse one allocation.
"""

import numpy as np

NAME = "native"


def im2col_one(const float[:, :, ::1] x, int stride, out=None):
    """Gather 3x3 patches of one CHW image into a (C*9, OH*OW) matrix."""
    cdef int c = x.shape[0]
    cdef int h = x.shape[1]
    cdef int w = x.shape[2]
    cdef int oh = (h - 1) // stride + 1
    cdef int ow = (w - 1) // stride + 1
    col_arr = np.empty((c * 9, oh * ow), dtype=np.float32) if out is None else out
    cdef float[:, ::1] col = col_arr
    cdef int ci, ki, kj, oy, ox, r, base, iy, ix, ox0, ox1
    for ci in range(c):
        for ki in range(3):
            for kj in range(3):
                r = ci * 9 + ki * 3 + kj
                ox0 = 1 if kj == 0 else 0
                ox1 = (w - kj) // stride + 1
                if ox1 > ow:
                    ox1 = ow
                for oy in range(oh):
                    iy = oy * stride + ki - 1
                    base = oy * ow
                    if iy < 0 or iy >= h:
                        for ox in range(ow):
                            col[r, base + ox] = 0.0
                        continue
                    for ox in range(ox0):
                        col[r, base + ox] = 0.0
                    if stride == 1:
                        for ox in range(ox0, ox1):
                            col[r, base + ox] = x[ci, iy, ox + kj - 1]
                    else:
                        ix = ox0 * stride + kj - 1
                        for ox in range(ox0, ox1):
                            col[r, base + ox] = x[ci, iy, ix]
                            ix += stride
                    for ox in range(ox1, ow):
                        col[r, base + ox] = 0.0
    return col_arr


def col2im_one(const float[:, ::1] gcol, int h, int w, int stride, out=None):
    """Scatter-add patch gradients back onto one CHW image, inverse of im2col_one."""
    cdef int c = gcol.shape[0] // 9
    cdef int oh = (h - 1) // stride + 1
    cdef int ow = (w - 1) // stride + 1
    gx_arr = np.zeros((c, h, w), dtype=np.float32) if out is None else out
    cdef float[:, :, ::1] gx = gx_arr
    cdef int ci, ki, kj, oy, ox, r, base, iy, ix, ox0, ox1
    if out is not None:
        gx[:, :, :] = 0.0
    for ci in range(c):
        for ki in range(3):
            for kj in range(3):
                r = ci * 9 + ki * 3 + kj
                ox0 = 1 if kj == 0 else 0
                ox1 = (w - kj) // stride + 1
                if ox1 > ow:
                    ox1 = ow
                for oy in range(oh):
                    iy = oy * stride + ki - 1
                    if iy < 0 or iy >= h:
                        continue
                    base = oy * ow
                    if stride == 1:
                        for ox in range(ox0, ox1):
                            gx[ci, iy, ox + kj - 1] += gcol[r, base + ox]
                    else:
                        ix = ox0 * stride + kj - 1
                        for ox in range(ox0, ox1):
                            gx[ci, iy, ix] += gcol[r, base + ox]
                            ix += stride
    return gx_arr


def upsample2x(const float[:, :, :, ::1] x):
    """Replicate each pixel of an NCHW batch into a 2x2 block."""
    cdef int n = x.shape[0]
    cdef int c = x.shape[1]
    cdef int h = x.shape[2]
    cdef int w = x.shape[3]
    y_arr = np.empty((n, c, 2 * h, 2 * w), dtype=np.float32)
    cdef float[:, :, :, ::1] y = y_arr
    cdef int i, ci, iy, ix
    cdef float v
    for i in range(n):
        for ci in range(c):
            for iy in range(h):
                for ix in range(w):
                    v = x[i, ci, iy, ix]
                    y[i, ci, 2 * iy, 2 * ix] = v
                    y[i, ci, 2 * iy, 2 * ix + 1] = v
                    y[i, ci, 2 * iy + 1, 2 * ix] = v
                    y[i, ci, 2 * iy + 1, 2 * ix + 1] = v
    return y_arr


def upsample2x_grad(const float[:, :, :, ::1] gy):
    """Sum the four replicated output gradients into each input position.

    Addition order matches the numpy backend: (0,0)+(0,1) then (1,0)+(1,1).
    """
    cdef int n = gy.shape[0]
    cdef int c = gy.shape[1]
    cdef int h = gy.shape[2] // 2
    cdef int w = gy.shape[3] // 2
    g_arr = np.empty((n, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] g = g_arr
    cdef int i, ci, iy, ix
    for i in range(n):
        for ci in range(c):
            for iy in range(h):
                for ix in range(w):
                    g[i, ci, iy, ix] = (
                        gy[i, ci, 2 * iy, 2 * ix] + gy[i, ci, 2 * iy, 2 * ix + 1]
                    ) + (
                        gy[i, ci, 2 * iy + 1, 2 * ix] + gy[i, ci, 2 * iy + 1, 2 * ix + 1]
                    )
    return g_arr
