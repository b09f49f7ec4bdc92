"""Pure-numpy implementations of the hot data-movement kernels.

These are the gather/scatter halves of convolution (the multiply itself is a
BLAS sgemm either way) plus nearest-neighbor upsampling. Patches are packed
one image at a time into a (C*9, OH*OW) matrix so the working set stays
cache-resident and the sgemm output lands directly in CHW order. The compiled
backend in _native.pyx implements the same four functions with C loops; both
produce bit-identical patch layouts so results do not depend on the backend
choice.
"""

import numpy as np

NAME = "numpy"


def im2col_one(x: np.ndarray, stride: int, out: np.ndarray | None = None) -> np.ndarray:
    """Gather 3x3 patches of one CHW image into a (C*9, OH*OW) matrix.

    Padding is implicit: a one-pixel zero border. Row layout is (c, ki, kj)
    major, matching weight.reshape(c_out, c_in * 9); column layout is
    (oh, ow) major. out, when given, must be a (C*9, OH*OW) float32 buffer.
    """
    c, h, w = x.shape
    oh = (h - 1) // stride + 1
    ow = (w - 1) // stride + 1
    xp = np.zeros((c, h + 2, w + 2), dtype=np.float32)
    xp[:, 1:-1, 1:-1] = x
    col_arr = np.empty((c * 9, oh * ow), dtype=np.float32) if out is None else out
    col = col_arr.reshape(c, 3, 3, oh, ow)
    for ki in range(3):
        for kj in range(3):
            col[:, ki, kj] = xp[:, ki : ki + (oh - 1) * stride + 1 : stride, kj : kj + (ow - 1) * stride + 1 : stride]
    return col_arr


def col2im_one(gcol: np.ndarray, h: int, w: int, stride: int, out: np.ndarray | None = None) -> np.ndarray:
    """Scatter-add patch gradients back onto one CHW image, inverse of im2col_one."""
    c = gcol.shape[0] // 9
    oh = (h - 1) // stride + 1
    ow = (w - 1) // stride + 1
    g = gcol.reshape(c, 3, 3, oh, ow)
    gxp = np.zeros((c, h + 2, w + 2), dtype=np.float32)
    for ki in range(3):
        for kj in range(3):
            gxp[:, ki : ki + (oh - 1) * stride + 1 : stride, kj : kj + (ow - 1) * stride + 1 : stride] += g[:, ki, kj]
    if out is None:
        return np.ascontiguousarray(gxp[:, 1:-1, 1:-1])
    out[...] = gxp[:, 1:-1, 1:-1]
    return out


def upsample2x(x: np.ndarray) -> np.ndarray:
    """Replicate each pixel of an NCHW batch into a 2x2 block."""
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def upsample2x_grad(gy: np.ndarray) -> np.ndarray:
    """Sum the four replicated output gradients into each input position."""
    n, c, h2, w2 = gy.shape
    g = gy.reshape(n, c, h2 // 2, 2, w2 // 2, 2)
    # fixed summation order (kj then ki) keeps results bit-reproducible
    return np.ascontiguousarray(
        (g[:, :, :, 0, :, 0] + g[:, :, :, 0, :, 1]) + (g[:, :, :, 1, :, 0] + g[:, :, :, 1, :, 1])
    )
