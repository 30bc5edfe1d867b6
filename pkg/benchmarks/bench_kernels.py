"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly, so the result does not depend on
FANET_DISABLE_NUMBA. Run with FANET_DISABLE_NUMBA=1 to time only numpy.
"""
import argparse
import time

import numpy as np

from fanet import kernels
from fanet._accel import USE_NUMBA


def _time(fn, repeat):
    fn()  # warm-up (JIT compile for numba)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 16, 64, 64))
    cols = kernels.im2col_numpy(x, 3, 3, 2, 1)
    img = rng.random((512, 512))
    h = np.array([[1.02, 0.05, -3.0], [-0.04, 0.98, 2.0], [1e-4, -5e-5, 1.0]])
    fill = np.zeros_like(img)
    a = rng.integers(0, 10, 1 << 20)
    b = rng.integers(0, 10, 1 << 20)
    return [
        ("im2col 32x16x64x64 k3 s2", lambda f: f(x, 3, 3, 2, 1), kernels.im2col_numpy, kernels.im2col_numba),
        ("col2im 32x16x64x64 k3 s2", lambda f: f(cols, x.shape, 3, 3, 2, 1),
         kernels.col2im_numpy, kernels.col2im_numba),
        ("warp 512x512", lambda f: f(img, h, fill), kernels.warp_perspective_numpy, kernels.warp_perspective_numba),
        ("joint hist 1M 10x10", lambda f: f(a, b, 10, 10), kernels.joint_histogram_numpy,
         kernels.joint_histogram_numba),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  max|diff|")
    for name, call, np_fn, nb_fn in cases():
        t_np = _time(lambda: call(np_fn), args.repeat)
        if not USE_NUMBA:
            print(f"{name:<28}{t_np * 1e3:>10.2f}{'-':>10}{'-':>9}")
            continue
        t_nb = _time(lambda: call(nb_fn), args.repeat)
        diff = float(np.max(np.abs(np.asarray(call(np_fn), float) - np.asarray(call(nb_fn), float))))
        print(f"{name:<28}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
