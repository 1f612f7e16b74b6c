"""Compare the compiled and numpy trajectory kernels.

    python benchmarks/bench_kernels.py [--n 100000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from pilotwave import kernels
from pilotwave.state import make_grid


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=100_000, help="beables per call")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = {
        "1-D, 1024 nodes": make_grid([(-20, 20, 1024)]),
        "2-D, 128^2 nodes": make_grid([(-8, 8, 128)] * 2),
        "3-D, 32^3 nodes": make_grid([(-6, 6, 32)] * 3),
    }
    backends = sorted(kernels.BACKENDS)
    print(f"backends available: {', '.join(backends)}; default {kernels.BACKEND}")
    print(f"{'case':<20}{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for label, g in cases.items():
        lo, hi = g.support()
        pts = rng.uniform(lo, hi, size=(args.n, g.dims))
        field = rng.normal(size=(g.dims,) + g.shape)
        fields = rng.normal(scale=0.1, size=(3, g.dims) + g.shape)
        times = np.array([0.0, 0.005, 0.01])
        res = {"interp": {}, "rk4": {}, f"rk4 x{args.threads}": {}}
        for b in backends:
            res["interp"][b] = best_of(lambda: kernels.interp_field(field, g, pts, backend=b), args.repeat)

            def rk4(threads, b=b):
                pos = pts.copy()
                act = np.ones(len(pos), np.uint8)
                kernels.rk4_ensemble(pos, act, fields, times, g, 0.0, 0.01, threads=threads, backend=b)

            res["rk4"][b] = best_of(lambda: rk4(1), args.repeat)
            res[f"rk4 x{args.threads}"][b] = best_of(lambda: rk4(args.threads), args.repeat)
        for kernel, by in res.items():
            row = f"{label:<20}{kernel:<14}" + "".join(f"{by[b] * 1e3:>10.2f}ms" for b in backends)
            if "compiled" in by:
                row += f"{by['python'] / by['compiled']:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
