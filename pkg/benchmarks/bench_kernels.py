"""Time the compiled tree kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--N 512] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from horizonrisk import _fallback
from horizonrisk.kernels import BACKEND

try:
    from horizonrisk import _kernels
except ImportError:
    _kernels = None


def cases(N, rng):
    sqrt_dt, dt = (1.0 / N) ** 0.5, 1.0 / N
    vals = rng.standard_normal(N + 1)
    coef = np.tile([0.1, 0.0, 0.3, 0.2], (N, 1))
    n_v = 16
    coef3 = np.tile(coef, (n_v, 1, 1))
    q_grid = np.linspace(-2, 2, 41)
    conj = np.tile(0.5 * q_grid**2, (N, 1))
    q_tri = rng.uniform(-1, 1, (N, N + 1))
    cost = rng.uniform(0, dt, (N, N + 1))
    return {
        "sweep_affine": ("sweep_affine", (N, 0, N, vals, coef, sqrt_dt, dt)),
        "volterra_diagonal": ("volterra_diagonal", (N, 0, n_v - 1, N, vals, coef3, sqrt_dt, dt)),
        "dual_sweep": ("dual_sweep", (N, 0, N, vals, q_grid, conj, sqrt_dt, dt)),
        "measure_sweep": ("measure_sweep", (N, 0, vals, q_tri, cost, sqrt_dt)),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=512)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    print(f"dispatch backend: {BACKEND}; N = {args.N}")
    if _kernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
    print(f"{'kernel':<20}{'python ms':>12}{'compiled ms':>14}{'speed-up':>10}")
    for name, (fn, a) in cases(args.N, np.random.default_rng(0)).items():
        py = min(timeit.repeat(lambda: getattr(_fallback, fn)(*a), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:<20}{py * 1e3:>12.2f}{'n/a':>14}{'':>10}")
            continue
        cy = min(timeit.repeat(lambda: getattr(_kernels, fn)(*a), number=1, repeat=args.repeat))
        print(f"{name:<20}{py * 1e3:>12.2f}{cy * 1e3:>14.2f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
