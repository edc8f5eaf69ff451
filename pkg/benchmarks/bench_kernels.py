#!/usr/bin/env python3
"""Numba vs numpy timings for the hot kernels and for a full forward solve.

Kernel timings call both implementations in one process. The end-to-end solve
runs in two subprocesses, one with NSMC_DISABLE_NUMBA=1, so that the flag is
exercised the way a user would set it.

Usage:
    python3 benchmarks/bench_kernels.py [--sizes 32 64 128] [--repeat 20] [--csv out.csv]
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from nsmc import kernels
from nsmc.grid import Grid, GridSpec

SOLVE_SNIPPET = """
import json, time
from nsmc._accel import USE_NUMBA
from nsmc.cli import random_control
from nsmc.forward import SolverParams, solve_state
from nsmc.grid import Grid, GridSpec
import numpy as np
g = Grid(GridSpec({n}, {n}, omega=(0.25, 0.75, 0.25, 0.75)))
p = SolverParams(nu=0.05, T=1.0, nt={nt})
u = random_control(g, p.nt, p.dt, np.random.default_rng(0), 1.0)
solve_state(g, SolverParams(nu=0.05, T=0.1, nt=2), None, None, random_control(g, 2, 0.05, np.random.default_rng(1), 1.0))
t = time.perf_counter()
solve_state(g, p, None, None, u)
print(json.dumps({{"numba": USE_NUMBA, "seconds": time.perf_counter() - t}}))
"""


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(sizes, repeat):
    rows = []
    rng = np.random.default_rng(0)
    for n in sizes:
        g = Grid(GridSpec(n, n))
        a, b = rng.normal(size=g.nvel), rng.normal(size=g.nvel)
        np.testing.assert_allclose(kernels.convect_numba(g, a, b), kernels.convect_numpy(g, a, b), rtol=1e-12, atol=1e-12)
        kernels.convect_numba(g, a, b)  # compile
        t_nb = best_of(lambda: kernels.convect_numba(g, a, b), repeat)
        t_np = best_of(lambda: kernels.convect_numpy(g, a, b), repeat)
        rows.append(("convect", n, t_np, t_nb))

        arr = rng.normal(size=g.shape1)
        mask = g.omega_mask(1)
        kernels.absmax_masked_numba(arr, mask)
        t_nb = best_of(lambda: kernels.absmax_masked_numba(arr, mask), repeat)
        t_np = best_of(lambda: kernels.absmax_masked_numpy(arr, mask), repeat)
        rows.append(("absmax", n, t_np, t_nb))
    return rows


def bench_solve(n: int, nt: int):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, NSMC_DISABLE_NUMBA=flag)
        res = subprocess.run(
            [sys.executable, "-c", SOLVE_SNIPPET.format(n=n, nt=nt)],
            env=env, capture_output=True, text=True, check=True,
        )
        rec = json.loads(res.stdout.strip().splitlines()[-1])
        out["numba" if rec["numba"] else "numpy"] = rec["seconds"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--solve-n", type=int, default=32)
    ap.add_argument("--solve-nt", type=int, default=64)
    ap.add_argument("--csv", help="write the kernel table here")
    args = ap.parse_args(argv)

    rows = bench_kernels(args.sizes, args.repeat)
    print(f"{'kernel':<9}{'n':>6}{'numpy [ms]':>13}{'numba [ms]':>13}{'speedup':>10}")
    for name, n, t_np, t_nb in rows:
        print(f"{name:<9}{n:>6}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>10.1f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["kernel", "n", "numpy_s", "numba_s"])
            wr.writerows(rows)

    solve = bench_solve(args.solve_n, args.solve_nt)
    print(
        f"\nforward solve {args.solve_n}x{args.solve_n}, {args.solve_nt} steps: "
        f"numpy {solve['numpy']:.2f} s, numba {solve['numba']:.2f} s "
        f"(x{solve['numpy'] / solve['numba']:.2f})"
    )


if __name__ == "__main__":
    main()
