#!/usr/bin/env python3
"""Compare the compiled extension kernels against the pure-NumPy fallback.

Times the two hot paths -- depthwise 3x3 convolution and iterative LK patch
refinement -- through both backends and prints a speedup table. Run after an
editable install:

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from mavsr import _kernels
from mavsr._kernels import _fallback

if not _kernels.HAVE_EXT:
    raise SystemExit("compiled extension not built; nothing to compare")
from mavsr._kernels import _core


def bench(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = []

    x = rng.standard_normal((48, 8, 64, 64))
    w = rng.standard_normal((48, 3, 3))
    b = rng.standard_normal(48)
    cases.append(("dconv3x3 48x8x64x64", "dconv3x3_forward", (x, w, b)))

    prev = rng.standard_normal((256, 256))
    nxt = np.roll(prev, (2, 3), axis=(0, 1)) + 0.01 * rng.standard_normal((256, 256))
    ix = np.gradient(nxt, axis=1)
    iy = np.gradient(nxt, axis=0)
    n = 400
    px = rng.uniform(20, 236, size=n)
    py = rng.uniform(20, 236, size=n)
    u0 = np.zeros(n)
    v0 = np.zeros(n)
    cases.append(
        ("lk_refine 400 pts 256^2", "lk_refine",
         (prev, nxt, ix, iy, px, py, u0, v0, 7, 30, 0.01, 1e-6)),
    )

    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<26} {'ext (ms)':>10} {'fallback (ms)':>14} {'speedup':>8}")
    for name, fn_name, a in cases:
        te = bench(getattr(_core, fn_name), a, args.repeats) * 1e3
        tf = bench(getattr(_fallback, fn_name), a, args.repeats) * 1e3
        print(f"{name:<26} {te:>10.2f} {tf:>14.2f} {tf / te:>7.1f}x")


if __name__ == "__main__":
    main()
