"""Timing of the B-spline evaluation kernel: compiled extension vs fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [npoints]
"""

import sys
import time

import numpy as np

from hsplines import _kernels_py

try:
    from hsplines import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def batched(fn, chunks):
    def run():
        for c in chunks:
            fn(3, 0, c)
            fn(3, 1, c)
    return run


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
    rng = np.random.default_rng(0)
    t = rng.uniform(0.0, 1.0, size=n)
    print("one large batch: %d points (best of 5)" % n)
    print("%-8s %-4s %12s %12s %8s" % ("degree", "nu", "fallback", "compiled", "speedup"))
    for p in (2, 3, 4):
        for nu in (0, 1):
            py = best_of(lambda: _kernels_py.local_bspline_values(p, nu, t))
            if _kernels is None:
                print("%-8d %-4d %10.2f ms %12s" % (p, nu, py * 1e3, "missing"))
                continue
            cx = best_of(lambda: _kernels.local_bspline_values(p, nu, t))
            a = _kernels_py.local_bspline_values(p, nu, t)
            b = _kernels.local_bspline_values(p, nu, t)
            assert np.allclose(a, b, atol=5e-15)
            print("%-8d %-4d %10.2f ms %10.2f ms %7.1fx"
                  % (p, nu, py * 1e3, cx * 1e3, py / cx))

    # assembly-shaped workload: many tiny quadrature batches, degree 3
    print()
    print("many small batches (degree 3, values + first derivative)")
    print("%-14s %12s %12s %8s" % ("batch", "fallback", "compiled", "speedup"))
    for size in (4, 6, 16):
        chunks = [rng.uniform(0.0, 1.0, size=size) for _ in range(2000)]
        py = best_of(batched(_kernels_py.local_bspline_values, chunks))
        if _kernels is None:
            print("%-14s %10.2f ms %12s" % ("2000 x %d" % size, py * 1e3, "missing"))
            continue
        cx = best_of(batched(_kernels.local_bspline_values, chunks))
        print("%-14s %10.2f ms %10.2f ms %7.1fx"
              % ("2000 x %d" % size, py * 1e3, cx * 1e3, py / cx))


if __name__ == "__main__":
    main()
