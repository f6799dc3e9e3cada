"""Benchmark the JIT-compiled kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py
(Set LFRECOG_DISABLE_NUMBA=1 to check the package runs without numba.)
"""

import time

import numpy as np

from lfrecog import kernels


def bench(label, fn, *args, repeats=5):
    fn(*args)  # warm up (triggers JIT compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    print(f"  {label:<22s} {1000 * best:8.2f} ms")
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"numba path enabled: {kernels.USE_NUMBA}")

    print("bilinear_resize 434x625x3 -> 224x224")
    src = rng.uniform(0, 255, (434, 625, 3))
    t_np = bench("numpy", kernels._bilinear_resize_np, src, 224, 224)
    if kernels.USE_NUMBA:
        t_jit = bench("numba", kernels._bilinear_resize_jit, src, 224, 224)
        print(f"  speedup: {t_np / t_jit:.2f}x")

    print("conv2d_valid 128x128x3, 8 3x3 filters")
    img = rng.standard_normal((128, 128, 3))
    w = rng.standard_normal((8, 3, 3, 3))
    b = rng.standard_normal(8)
    t_np = bench("numpy", kernels._conv2d_valid_np, img, w, b)
    if kernels.USE_NUMBA:
        t_jit = bench("numba", kernels._conv2d_valid_jit, img, w, b)
        print(f"  speedup: {t_np / t_jit:.2f}x")

    print("maxpool2 256x256x16")
    img = rng.standard_normal((256, 256, 16))
    t_np = bench("numpy", kernels._maxpool2_np, img)
    if kernels.USE_NUMBA:
        t_jit = bench("numba", kernels._maxpool2_jit, img)
        print(f"  speedup: {t_np / t_jit:.2f}x")


if __name__ == "__main__":
    main()
