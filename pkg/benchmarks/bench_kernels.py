"""Compare the compiled histogram kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py --samples 10000 --codes 64 --factors 6

Times the full mutual-information-matrix path (discretize + pairwise joint
counts) for both implementations and checks that they agree exactly.
"""

import argparse
import time

import numpy as np

from disco import _kernels_py

try:
    from disco import _kernels as _compiled
except ImportError:
    _compiled = None


def mi_tables(impl, codes, factors, bins):
    cb = impl.discretize_columns(codes, bins)
    fb = impl.discretize_columns(factors, bins)
    return impl.pairwise_joint_counts(cb, fb, bins, bins)


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--samples", type=int, default=10000)
    parser.add_argument("--codes", type=int, default=64)
    parser.add_argument("--factors", type=int, default=6)
    parser.add_argument("--bins", type=int, default=20)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    codes = rng.standard_normal((args.samples, args.codes))
    factors = rng.random((args.samples, args.factors))

    t_py, ref = best_of(lambda: mi_tables(_kernels_py, codes, factors, args.bins), args.repeats)
    print(f"python  : {t_py * 1e3:9.2f} ms")
    if _compiled is None:
        print("cython  : not built (install with a C compiler and Cython)")
        return
    t_cy, out = best_of(lambda: mi_tables(_compiled, codes, factors, args.bins), args.repeats)
    print(f"cython  : {t_cy * 1e3:9.2f} ms")
    print(f"speedup : {t_py / t_cy:9.2f}x")
    print(f"identical tables: {np.array_equal(ref, out)}")


if __name__ == "__main__":
    main()
