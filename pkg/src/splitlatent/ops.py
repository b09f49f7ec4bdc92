"""Differentiable operations used by the detector network and its losses.

Convolution is im2col + BLAS sgemm; the patch gather/scatter goes through the
selected kernel backend (compiled or numpy, see _kernels). Everything runs in
float32. Subgradients of |x| and relu at 0 are 0.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .autodiff import DiffTensor, make_result
from .errors import ContractError


def conv2d(x: DiffTensor, w: DiffTensor, b: DiffTensor, stride: int = 1) -> DiffTensor:
    """3x3 cross-correlation with zero 'same' padding and stride 1 or 2."""
    if x.value.ndim != 4 or w.value.ndim != 4 or w.value.shape[2:] != (3, 3):
        raise ContractError(
            f"conv2d expects NCHW input and (Cout,Cin,3,3) weight, got {x.shape} and {w.shape}"
        )
    if x.value.shape[1] != w.value.shape[1]:
        raise ContractError(
            f"conv2d channel mismatch: input has {x.value.shape[1]}, weight expects {w.value.shape[1]}"
        )
    if stride not in (1, 2):
        raise ContractError(f"conv2d stride must be 1 or 2, got {stride}")
    n, c_in, h, wth = x.value.shape
    if h % stride or wth % stride:
        raise ContractError(f"spatial size {h}x{wth} not divisible by stride {stride}")
    if b.value.shape != (w.value.shape[0],):
        raise ContractError(f"bias shape {b.value.shape} does not match Cout {w.value.shape[0]}")

    c_out = w.value.shape[0]
    oh, ow = h // stride, wth // stride
    w2 = w.value.reshape(c_out, c_in * 9)
    y = np.empty((n, c_out, oh, ow), dtype=np.float32)
    col = np.empty((c_in * 9, oh * ow), dtype=np.float32)
    for i in range(n):
        K.im2col_one(x.value[i], stride, out=col)
        np.matmul(w2, col, out=y[i].reshape(c_out, oh * ow))
    y += b.value.reshape(1, c_out, 1, 1)

    def bwd(gy: np.ndarray) -> None:
        gy3 = gy.reshape(n, c_out, oh * ow)
        if b.requires_grad:
            b.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        if not (w.requires_grad or x.requires_grad):
            return
        # patches are repacked per image instead of keeping the col matrix alive
        col = np.empty((c_in * 9, oh * ow), dtype=np.float32)
        gw2 = np.zeros((c_out, c_in * 9), dtype=np.float32) if w.requires_grad else None
        gwi = np.empty_like(gw2) if w.requires_grad else None
        gx = np.empty_like(x.value) if x.requires_grad else None
        gcol = np.empty_like(col) if x.requires_grad else None
        for i in range(n):
            if gw2 is not None:
                K.im2col_one(x.value[i], stride, out=col)
                gw2 += np.matmul(gy3[i], col.T, out=gwi)
            if gx is not None:
                np.matmul(w2.T, gy3[i], out=gcol)
                K.col2im_one(gcol, h, wth, stride, out=gx[i])
        if gw2 is not None:
            w.accumulate_grad(gw2.reshape(w.value.shape))
        if gx is not None:
            x.accumulate_grad(gx)

    return make_result(y, (x, w, b), bwd)


def nn_upsample2x(x: DiffTensor) -> DiffTensor:
    """Nearest-neighbor 2x upsampling of an NCHW batch."""
    if x.value.ndim != 4:
        raise ContractError(f"nn_upsample2x expects NCHW input, got shape {x.shape}")
    y = K.upsample2x(x.value)

    def bwd(gy: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(K.upsample2x_grad(gy))

    return make_result(y, (x,), bwd)


def relu(x: DiffTensor) -> DiffTensor:
    y = np.maximum(x.value, 0.0)

    def bwd(gy: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gy * (y > 0.0))

    return make_result(y, (x,), bwd)


def tanh_act(x: DiffTensor) -> DiffTensor:
    y = np.tanh(x.value)

    def bwd(gy: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gy * (1.0 - y * y))

    return make_result(y, (x,), bwd)


def softplus(x: DiffTensor) -> DiffTensor:
    """Numerically stable log(1 + exp(x))."""
    v = x.value
    y = np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0)

    def bwd(gy: np.ndarray) -> None:
        if x.requires_grad:
            # sigmoid(v), stable on both tails
            e = np.exp(-np.abs(v))
            sig = np.where(v >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)
            x.accumulate_grad(gy * sig)

    return make_result(y.astype(np.float32), (x,), bwd)


def absval(x: DiffTensor) -> DiffTensor:
    y = np.abs(x.value)

    def bwd(gy: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(gy * np.sign(x.value))

    return make_result(y, (x,), bwd)


def add(x: DiffTensor, y: DiffTensor) -> DiffTensor:
    if x.value.shape != y.value.shape:
        raise ContractError(f"add shape mismatch: {x.shape} vs {y.shape}")
    out = x.value + y.value

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)
        if y.requires_grad:
            y.accumulate_grad(g)

    return make_result(out, (x, y), bwd)


def sub(x: DiffTensor, y: DiffTensor) -> DiffTensor:
    if x.value.shape != y.value.shape:
        raise ContractError(f"sub shape mismatch: {x.shape} vs {y.shape}")
    out = x.value - y.value

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)
        if y.requires_grad:
            y.accumulate_grad(-g)

    return make_result(out, (x, y), bwd)


def scale(x: DiffTensor, alpha: float) -> DiffTensor:
    a = np.float32(alpha)
    out = x.value * a

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * a)

    return make_result(out, (x,), bwd)


def mul_const(x: DiffTensor, c: np.ndarray) -> DiffTensor:
    """Elementwise product with a non-differentiated constant array."""
    c = np.asarray(c, dtype=np.float32)
    out = x.value * c

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * c)

    return make_result(out, (x,), bwd)


def sum_all(x: DiffTensor) -> DiffTensor:
    out = np.float32(x.value.sum())

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.value, g))

    return make_result(np.asarray(out), (x,), bwd)


def mean_all(x: DiffTensor) -> DiffTensor:
    if x.value.size == 0:
        raise ContractError("mean of an empty tensor")
    k = np.float32(1.0 / x.value.size)
    out = np.asarray(np.float32(x.value.mean()))

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.value, g * k))

    return make_result(out, (x,), bwd)


def l1_mean(x: DiffTensor) -> DiffTensor:
    """Mean absolute value over all elements, as a scalar."""
    if x.value.size == 0:
        raise ContractError("l1_mean of an empty tensor")
    k = np.float32(1.0 / x.value.size)
    out = np.asarray(np.float32(np.abs(x.value).mean()))

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.sign(x.value) * (g * k))

    return make_result(out, (x,), bwd)


def mean_abs_samplewise(x: DiffTensor) -> DiffTensor:
    """Per-sample mean absolute value: input (N, ...) gives output (N,)."""
    n = x.value.shape[0]
    per = x.value.size // n
    if per == 0:
        raise ContractError("mean_abs_samplewise of an empty tensor")
    k = np.float32(1.0 / per)
    out = np.abs(x.value).reshape(n, -1).mean(axis=1).astype(np.float32)

    def bwd(gy: np.ndarray) -> None:
        if x.requires_grad:
            gshape = (n,) + (1,) * (x.value.ndim - 1)
            x.accumulate_grad(np.sign(x.value) * (gy.reshape(gshape) * k))

    return make_result(out, (x,), bwd)


def channel_split(x: DiffTensor, k: int) -> tuple[DiffTensor, DiffTensor]:
    """Split an NCHW tensor along channels into the first k and the rest."""
    if not 0 < k < x.value.shape[1]:
        raise ContractError(f"split point {k} outside channel range {x.value.shape[1]}")
    lo = np.ascontiguousarray(x.value[:, :k])
    hi = np.ascontiguousarray(x.value[:, k:])

    def bwd_lo(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad[:, :k] += g

    def bwd_hi(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad[:, k:] += g

    return make_result(lo, (x,), bwd_lo), make_result(hi, (x,), bwd_hi)


def masked_concat(h0: DiffTensor, h1: DiffTensor, labels: np.ndarray) -> DiffTensor:
    """Concatenate latent halves along channels, zeroing each sample's off-class half.

    labels holds 0 (real, keeps h0) or 1 (fake, keeps h1) per sample. No
    gradient flows into a zeroed half.
    """
    n = h0.value.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch size {n}")
    m0 = (labels == 0).astype(np.float32).reshape(n, 1, 1, 1)
    m1 = (labels == 1).astype(np.float32).reshape(n, 1, 1, 1)
    kc = h0.value.shape[1]
    out = np.concatenate([h0.value * m0, h1.value * m1], axis=1)

    def bwd(g: np.ndarray) -> None:
        if h0.requires_grad:
            h0.accumulate_grad(g[:, :kc] * m0)
        if h1.requires_grad:
            h1.accumulate_grad(g[:, kc:] * m1)

    return make_result(out, (h0, h1), bwd)
