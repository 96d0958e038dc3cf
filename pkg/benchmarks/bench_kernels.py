#!/usr/bin/env python3
"""Timing comparison of the numba kernels against the pure-numpy
fallback, at the sizes the pipeline actually hits.

Run: python benchmarks/bench_kernels.py [--repeats N]
The active backend is whatever ZOOADAPT_BACKEND selected at import;
the numpy column always uses the uncompiled reference implementations.
"""

import argparse
import time

import numpy as np

from zooadapt import kernels


def best_of(fn, arg, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(arg)
        times.append(time.perf_counter() - t0)
    return min(times)


CASES = [
    ("softmax_rows", kernels.softmax_rows,
     lambda rng, n: rng.normal(size=(n, 8)) * 4),
    ("entropy_rows", kernels.entropy_rows,
     lambda rng, n: rng.dirichlet(np.ones(8), size=n)),
    ("pairwise_sq_dists", kernels.pairwise_sq_dists,
     lambda rng, n: rng.normal(size=(n, 8))),
]

SIZES = [400, 2000, 5000]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backend = kernels.active_backend()
    print(f"active backend: {backend}")
    if backend == "numba":
        # trigger JIT so compile time stays out of the measurements
        for name, fn, gen in CASES:
            fn(gen(rng, 16))

    header = f"{'kernel':<20}{'n':>6}{backend:>14}{'numpy':>14}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, fn, gen in CASES:
        ref = kernels.NUMPY_IMPLS[name]
        for n in SIZES:
            data = gen(rng, n)
            t_active = best_of(fn, data, args.repeats)
            t_numpy = best_of(ref, data, args.repeats)
            print(f"{name:<20}{n:>6}{t_active * 1e3:>12.3f}ms"
                  f"{t_numpy * 1e3:>12.3f}ms{t_numpy / t_active:>8.2f}x")


if __name__ == "__main__":
    main()
