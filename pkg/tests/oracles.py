"""Independent reference implementations used to check the engine.

Everything here is float64 and written in the most obvious way available
(quadruple loops, direct formulas), deliberately sharing no code with the
package. Gradient checks recompute the forward pass in float64 through these
references so central differences are not drowned by float32 rounding.
"""

from __future__ import annotations

import numpy as np


def conv2d_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Quadruple-loop 3x3 cross-correlation, zero 'same' padding."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, c_in, h, wd = x.shape
    c_out = w.shape[0]
    oh, ow = h // stride, wd // stride
    y = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for i in range(n):
        for co in range(c_out):
            for oy in range(oh):
                for ox in range(ow):
                    acc = b[co]
                    for ci in range(c_in):
                        for ki in range(3):
                            for kj in range(3):
                                iy = oy * stride + ki - 1
                                ix = ox * stride + kj - 1
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[i, ci, iy, ix] * w[co, ci, ki, kj]
                    y[i, co, oy, ox] = acc
    return y


def conv2d_ref(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Vectorized float64 conv used inside reference forward passes."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c_in, h, wd = x.shape
    c_out = w.shape[0]
    oh, ow = h // stride, wd // stride
    xp = np.zeros((n, c_in, h + 2, wd + 2), dtype=np.float64)
    xp[:, :, 1:-1, 1:-1] = x
    y = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for ki in range(3):
        for kj in range(3):
            win = xp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride]
            y += np.einsum("nchw,oc->nohw", win, w[:, :, ki, kj])
    return y + np.asarray(b, dtype=np.float64).reshape(1, c_out, 1, 1)


def upsample2x_ref(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.repeat(2, axis=2).repeat(2, axis=3)


def relu_ref(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softplus_ref(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def finite_diff(f, arrays: list, which: int, index: tuple, step: float = 1e-3) -> float:
    """Central difference of scalar f(arrays) wrt arrays[which][index]."""
    plus = [a.astype(np.float64).copy() for a in arrays]
    minus = [a.astype(np.float64).copy() for a in arrays]
    plus[which][index] += step
    minus[which][index] -= step
    return (f(plus) - f(minus)) / (2.0 * step)


def grad_mismatch(analytic: float, fd: float, rel_tol: float = 1e-3, abs_tol: float = 1e-5) -> bool:
    """True when analytic and finite-difference values disagree.

    Elements with tiny analytic gradient are compared absolutely, the rest
    relatively against the larger magnitude.
    """
    if abs(analytic) < 1e-6:
        return abs(analytic - fd) > abs_tol
    denom = max(abs(analytic), abs(fd))
    return abs(analytic - fd) / denom > rel_tol


def kink_suspect(f, arrays: list, which: int, index: tuple, step: float = 1e-3) -> bool:
    """Heuristic: the two-scale central differences disagree near a kink."""
    d1 = finite_diff(f, arrays, which, index, step)
    d2 = finite_diff(f, arrays, which, index, step / 2.0)
    if abs(d1) < 1e-6 and abs(d2) < 1e-6:
        return False
    return abs(d1 - d2) / max(abs(d1), abs(d2), 1e-12) > 1e-3


def check_gradients(
    build_loss,
    tensors: list,
    ref_loss,
    rng: np.random.Generator,
    n_coords: int = 12,
    step: float = 1e-3,
) -> list:
    """Compare engine gradients against finite differences of a reference loss.

    build_loss(tensors) runs the engine graph and returns the scalar
    DiffTensor; ref_loss(list of float64 arrays) recomputes the same scalar
    through the float64 references. Random coordinates sitting on a kink of
    relu/abs are skipped via the two-scale heuristic. Returns a list of
    mismatch descriptions (empty means pass).
    """
    loss = build_loss(tensors)
    loss.backward()
    arrays = [t.value for t in tensors]
    failures = []
    ref_val = ref_loss([a.astype(np.float64) for a in arrays])
    if abs(loss.item() - ref_val) > 1e-4 * max(1.0, abs(ref_val)):
        failures.append(f"forward mismatch: engine {loss.item():.6g} vs reference {ref_val:.6g}")
    for which, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        size = t.value.size
        k = min(n_coords, size)
        flat_choices = rng.choice(size, size=k, replace=False)
        for flat in flat_choices:
            index = np.unravel_index(int(flat), t.value.shape)
            if kink_suspect(ref_loss, arrays, which, index, step):
                continue
            fd = finite_diff(ref_loss, arrays, which, index, step)
            analytic = float(t.grad[index])
            if grad_mismatch(analytic, fd):
                failures.append(
                    f"tensor {which} index {index}: analytic {analytic:.6g} vs fd {fd:.6g}"
                )
    return failures
