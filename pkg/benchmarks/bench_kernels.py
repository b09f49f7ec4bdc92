"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the patch pack/scatter kernels (the hot loops behind conv2d) and the
2x upsampling pair on training-shaped tensors, then a full conv2d
forward+backward through the autodiff engine under each backend.

Run:  python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import importlib
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from splitlatent._kernels import numpy_backend  # noqa: E402

try:
    from splitlatent._kernels import _native as native_backend
except ImportError:
    native_backend = None

# (channels, height, width, stride): encoder/decoder shapes at 64x64 input
CONV_SHAPES = [
    (3, 64, 64, 1),
    (16, 64, 64, 2),
    (32, 32, 32, 2),
    (64, 16, 16, 2),
    (128, 8, 8, 2),
    (128, 8, 8, 1),
    (16, 64, 64, 1),
]


def time_fn(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pack_scatter(backend, repeats: int) -> tuple[float, float]:
    rng = np.random.default_rng(0)
    pack = scatter = 0.0
    for c, h, w, stride in CONV_SHAPES:
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        col = backend.im2col_one(x, stride)
        gcol = rng.standard_normal(col.shape).astype(np.float32)
        buf_col = np.empty_like(col)
        buf_img = np.empty_like(x)
        pack += time_fn(lambda: backend.im2col_one(x, stride, out=buf_col), repeats)
        scatter += time_fn(lambda: backend.col2im_one(gcol, h, w, stride, out=buf_img), repeats)
    return pack, scatter


def bench_upsample(backend, repeats: int) -> tuple[float, float]:
    rng = np.random.default_rng(1)
    x = rng.standard_normal((64, 128, 8, 8)).astype(np.float32)
    gy = rng.standard_normal((64, 128, 16, 16)).astype(np.float32)
    up = time_fn(lambda: backend.upsample2x(x), repeats)
    down = time_fn(lambda: backend.upsample2x_grad(gy), repeats)
    return up, down


def bench_conv_step(backend_name: str, repeats: int) -> float:
    """Full conv2d forward+backward through the engine under one backend."""
    os.environ["FT_BACKEND"] = backend_name
    import splitlatent._kernels as kernels
    importlib.reload(kernels)
    import splitlatent.ops as ops
    importlib.reload(ops)
    from splitlatent.autodiff import DiffTensor

    rng = np.random.default_rng(2)
    x = DiffTensor(rng.standard_normal((64, 16, 64, 64)).astype(np.float32))
    w = DiffTensor(0.05 * rng.standard_normal((32, 16, 3, 3)).astype(np.float32), requires_grad=True)
    b = DiffTensor(np.zeros(32, dtype=np.float32), requires_grad=True)

    def step():
        y = ops.conv2d(x, w, b, stride=2)
        ops.mean_all(ops.absval(y)).backward()
        w.zero_grad()
        b.zero_grad()

    step()
    return time_fn(step, repeats)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = [("numpy", numpy_backend)]
    if native_backend is not None:
        backends.append(("native", native_backend))
    else:
        print("native extension not built; benchmarking the fallback only\n")

    results = {}
    print(f"{'backend':<8} {'pack(ms)':>10} {'scatter(ms)':>12} {'up2x(ms)':>10} {'up2x_grad(ms)':>14}")
    for name, mod in backends:
        pack, scatter = bench_pack_scatter(mod, args.repeats)
        up, down = bench_upsample(mod, args.repeats)
        results[name] = pack + scatter
        print(f"{name:<8} {pack*1e3:>10.2f} {scatter*1e3:>12.2f} {up*1e3:>10.2f} {down*1e3:>14.2f}")

    print(f"\n{'backend':<8} {'conv2d fwd+bwd, 64x16x64x64 batch (ms)':>42}")
    for name, _ in backends:
        step = bench_conv_step(name, args.repeats)
        print(f"{name:<8} {step*1e3:>42.1f}")

    if len(results) == 2:
        print(f"\npack+scatter speedup native vs numpy: {results['numpy'] / results['native']:.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
