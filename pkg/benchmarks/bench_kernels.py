"""Time the numba kernels against their numpy fallbacks.

Usage: ``python benchmarks/bench_kernels.py [--repeat 5] [--size 200000]``.
The first numba call (compilation) is excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from enlarge_sim import kernels
from enlarge_sim._accel import HAVE_NUMBA


def cases(size: int):
    g = np.random.default_rng(0)
    x = g.uniform(0.0, 1.0, size)
    grid = np.linspace(0.0, 1.0, 1025)
    ac = (0.5 * grid)[None, :]
    kappas, smaxs = np.array([1.0]), np.array([1.0])
    total = ac + kernels.cantor_numpy(grid, 48)[None, :]
    theta = g.standard_exponential(size // 10)
    n_paths = size // 100
    path = np.sort(g.integers(0, n_paths, size))
    time = g.uniform(0.0, 1.0, size)
    order = np.lexsort((time, path))
    weight = g.standard_normal(size)
    return {
        "cantor": ((x, 48), kernels.cantor_numpy, getattr(kernels, "cantor_numba", None)),
        "cantor_distance": ((x, 40), kernels.cantor_distance_numpy, getattr(kernels, "cantor_distance_numba", None)),
        "first_passage": ((grid, ac, total, theta, kappas, smaxs, 48, 1e-12), kernels.first_passage_numpy,
                          getattr(kernels, "first_passage_numba", None)),
        "jump_cumsum": ((n_paths, grid, path[order], time[order], weight[order]), kernels.jump_cumsum_numpy,
                        getattr(kernels, "jump_cumsum_numba", None)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=200_000)
    args = ap.parse_args()
    print(f"{'kernel':<16} {'numpy [ms]':>12} {'numba [ms]':>12} {'speed-up':>9}")
    for name, (a, f_np, f_nb) in cases(args.size).items():
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat)) * 1e3
        if HAVE_NUMBA and f_nb is not None:
            f_nb(*a)
            t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<16} {t_np:12.2f} {t_nb:12.2f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:<16} {t_np:12.2f} {'n/a':>12} {'':>9}")


if __name__ == "__main__":
    main()
