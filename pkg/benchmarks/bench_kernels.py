"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py --n 200 400 --d 2 5

Both backends are checked for agreement before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from gpselect import _pykernels

try:
    from gpselect import _ckernels
except ImportError:
    _ckernels = None


def cases(n, d, chi, rng):
    xs = rng.random((n, d)) * 4.0
    ys = rng.random((n // 2, d)) * 4.0
    w = rng.standard_normal((n, n // 2))
    return {
        "corr_sym": lambda m: m.corr_sym(xs, chi),
        "corr_cross": lambda m: m.corr_cross(xs, ys, chi),
        "corr_dstack": lambda m: m.corr_dstack(xs, chi),
        "grad_contract": lambda m: m.grad_contract(xs, ys, chi, w),
    }


def best_of(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[100, 400])
    ap.add_argument("--d", type=int, nargs="+", default=[1, 5])
    ap.add_argument("--chi", type=int, default=2, help="regularity index, nu = chi + 1/2 (-1 for Gaussian)")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _ckernels is None:
        print("compiled backend not built; run `pip install --no-build-isolation -e .` first", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<14}{'n':>6}{'d':>4}{'python ms':>12}{'cython ms':>12}{'speedup':>9}")
    for n in args.n:
        for d in args.d:
            for name, fn in cases(n, d, args.chi, rng).items():
                a, b = fn(_pykernels), fn(_ckernels)
                if not np.allclose(a, b, rtol=1e-12, atol=1e-14):
                    print(f"{name}: backends disagree", file=sys.stderr)
                    return 2
                tp = best_of(lambda: fn(_pykernels), args.repeat)
                tc = best_of(lambda: fn(_ckernels), args.repeat)
                print(f"{name:<14}{n:>6}{d:>4}{tp * 1e3:>12.3f}{tc * 1e3:>12.3f}{tp / tc:>9.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
