"""Compare the compiled and NumPy separation kernels.

Usage: python benchmarks/bench_kernels.py [--sizes 500,1000,2000] [--d 20] [--repeat 5]
"""

import argparse
import time

import numpy as np

from scqr import _kernels_py

try:
    from scqr import _kernels as _ext
except ImportError:  # extension not built
    _ext = None


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="500,1000,2000")
    ap.add_argument("--d", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'n':>7}{'numpy (s)':>12}{'cython (s)':>12}{'speedup':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        X = rng.standard_normal((n, args.d))
        theta = rng.standard_normal(n)
        beta = rng.standard_normal((n, args.d))
        for name in ("separation_argmax", "violation_sumsq"):
            t_py, out_py = _time(getattr(_kernels_py, name), (X, theta, beta), args.repeat)
            if _ext is None:
                print(f"{name:<18}{n:>7}{t_py:>12.4f}{'n/a':>12}{'':>9}")
                continue
            t_c, out_c = _time(getattr(_ext, name), (X, theta, beta), args.repeat)
            if name == "separation_argmax":
                assert np.array_equal(out_py[0], out_c[0]) and np.allclose(out_py[1], out_c[1])
            else:
                assert np.isclose(out_py, out_c, rtol=1e-9)
            print(f"{name:<18}{n:>7}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.2f}")


if __name__ == "__main__":
    main()
