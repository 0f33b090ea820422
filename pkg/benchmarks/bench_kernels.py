"""Compare the compiled and NumPy Monte Carlo kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--trials 2000] [--users 4096] [--repeat 5]

Prints the best-of-``repeat`` wall time of each kernel per backend and the
speedup, and checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from leomimo import _pykernels

try:
    from leomimo._ext import ckernels
except ImportError:
    ckernels = None


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=2000)
    parser.add_argument("--users", type=int, default=4096)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    t, n = args.trials, args.users
    x = rng.exponential(256.0, (t, n))
    a, c, w = rng.uniform(0, 10, n), rng.uniform(0, 1, n), np.full(n, 1 / 16)
    z = rng.standard_normal((t, 2 * n))
    means, stds = rng.uniform(0, 15, n), rng.uniform(0, 5, n)

    cases = {
        "fixed_rate_sums": lambda mod: mod.fixed_rate_sums(x, a, c, w),
        "rician_power": lambda mod: mod.rician_power(z, means, stds),
    }
    backends = {"python": _pykernels}
    if ckernels is not None:
        backends["cython"] = ckernels
    else:
        print("compiled kernels not available; timing the NumPy backend only")

    print(f"{t} trials x {n} users, best of {args.repeat}")
    for name, fn in cases.items():
        times = {}
        for label, mod in backends.items():
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        line = "  ".join(f"{label} {sec * 1e3:8.1f} ms" for label, sec in times.items())
        if "cython" in times:
            line += f"  speedup {times['python'] / times['cython']:.2f}x"
            ref, out = fn(_pykernels), fn(ckernels)
            ref = ref[0] if isinstance(ref, tuple) else ref
            out = out[0] if isinstance(out, tuple) else out
            line += f"  max rel diff {np.max(np.abs(out - ref) / np.abs(ref)):.1e}"
        print(f"{name:16s} {line}")


if __name__ == "__main__":
    main()
