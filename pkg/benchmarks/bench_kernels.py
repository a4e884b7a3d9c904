"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends are loaded side by side; outputs are also checked for equality.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from beamdn import _kernels_py

try:
    from beamdn import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, 20000)
    g = rng.uniform(0.1, 50.0, 20000)
    costs = [rng.uniform(0.0, 1.0, (8, 24)) for _ in range(200)]
    return [
        ("beta_fill 1e5", lambda k: k.beta_fill(7, 0, 8.0, 2.0, 100000)[0]),
        ("gamma_fill 1e5", lambda k: k.gamma_fill(7, 0, 0.7, 100000)[0]),
        ("lgamma_vec 2e4", lambda k: k.lgamma_vec(g)),
        ("betainc_vec 2e4", lambda k: k.betainc_vec(8.0, 2.0, x)),
        ("hungarian 200x(8x24)", lambda k: [k.hungarian(c) for c in costs]),
    ]


def _same(a, b) -> bool:
    if isinstance(a, list):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timing repeats; the best is reported")
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the Python fallback is available")
    print(f"{'kernel':<24}{'python s':>12}{'compiled s':>12}{'speedup':>10}  identical")
    for name, fn in cases():
        tp, outp = _time(lambda: fn(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:<24}{tp:>12.4f}{'-':>12}{'-':>10}  -")
            continue
        tc, outc = _time(lambda: fn(compiled), args.repeat)
        print(f"{name:<24}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x  {_same(outp, outc)}")


if __name__ == "__main__":
    main()
