"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--p 100000] [--repeat 20]

Prints one line per kernel with the median wall time of each path and the
speed-up.  Compilation happens in a warm-up call that is not timed.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from amptune._accel import HAVE_NUMBA, numba_kernels, numpy_kernels


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=100_000, help="vector length for the elementwise kernels")
    ap.add_argument("--n", type=int, default=400, help="rows of X for the coordinate-descent sweep")
    ap.add_argument("--cols", type=int, default=500, help="columns of X for the coordinate-descent sweep")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal(args.p)
    out = np.empty_like(x)
    X = np.asfortranarray(rng.standard_normal((args.n, args.cols)) / np.sqrt(args.n))
    y = rng.standard_normal(args.n)
    col_sq = np.einsum("ij,ij->j", X, X)
    idx = np.arange(args.cols, dtype=np.int64)

    def sweep(k):
        beta = np.zeros(args.cols)
        r = y.copy()
        return lambda: k.cd_sweep(X, r, beta, 0.1, col_sq, idx)

    cases = {
        "soft_threshold_count": lambda k: (lambda: k.soft_threshold_count(x, 0.7, out)),
        "sure_sum": lambda k: (lambda: k.sure_sum(x, 0.7)),
        "cd_sweep": sweep,
    }
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}")
    for name, make in cases.items():
        make(numba_kernels)()  # compile
        t_np = _median_time(make(numpy_kernels), args.repeat)
        t_nb = _median_time(make(numba_kernels), args.repeat)
        print(f"{name:<22}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
