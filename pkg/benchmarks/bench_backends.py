"""Time the hot kernels under the compiled and plain-Python backends.

Usage:
    python benchmarks/bench_backends.py            # compare both backends
    python benchmarks/bench_backends.py --json     # current backend only

The comparison mode re-executes this script in subprocesses with
FIELDTOPO_BACKEND set to each backend in turn, so the import-time backend
selection is exercised exactly as in production.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def workloads(size: int):
    from fieldtopo.cubical import (
        betti_curve,
        component_records,
        persistence_diagram,
    )
    from fieldtopo.fields import sample_shot_noise_field
    from fieldtopo.geometry import Box
    from fieldtopo.kernels import make_kernel
    from fieldtopo.rng import make_stream, uniform_marks

    field = np.random.default_rng(12345).normal(size=(size, size))
    levels = np.linspace(-2.0, 2.0, 64)
    shot_kernel = make_kernel(2, "bump", 1.0, normalization="L1")
    shot_window = Box((0.0, 0.0), (16.0, 16.0))

    return [
        ("component_sweep (betti q=0)",
         lambda: betti_curve(field, levels, q=0)),
        ("pair_sweep (betti q=1)",
         lambda: betti_curve(field, levels, q=1)),
        ("reduce_boundary (diagram)",
         lambda: persistence_diagram(field)),
        ("label + stats (records)",
         lambda: component_records(field, 0.5)),
        ("shot-noise accumulation",
         lambda: sample_shot_noise_field(
             shot_kernel, shot_window, 0.125, intensity=2.0,
             marks=uniform_marks(0.5, 1.5), stream=make_stream(99))),
    ]


def measure(size: int, reps: int) -> dict:
    from fieldtopo._backend import BACKEND

    results = {}
    for name, fn in workloads(size):
        fn()  # warmup: triggers jit compilation on the numba backend
        best = float("inf")
        for _ in range(reps):
            start = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - start)
        results[name] = best
    return {"backend": BACKEND, "size": size, "timings": results}


def compare(size: int, reps: int):
    runs = {}
    for backend in ("numba", "python"):
        env = {**os.environ, "FIELDTOPO_BACKEND": backend}
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--json",
             "--size", str(size), "--reps", str(reps)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"{backend} backend failed:\n{proc.stderr}", file=sys.stderr)
            return 1
        runs[backend] = json.loads(proc.stdout)

    width = max(len(k) for k in runs["numba"]["timings"]) + 2
    print(f"field {size}x{size}, best of {reps}")
    print(f"{'kernel':<{width}}{'numba':>12}{'python':>12}{'speedup':>10}")
    for name, t_numba in runs["numba"]["timings"].items():
        t_py = runs["python"]["timings"][name]
        print(f"{name:<{width}}{t_numba * 1e3:>10.2f}ms{t_py * 1e3:>10.2f}ms"
              f"{t_py / t_numba:>9.1f}x")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=128,
                        help="field side length in vertices")
    parser.add_argument("--reps", type=int, default=5,
                        help="timing repetitions per kernel")
    parser.add_argument("--json", action="store_true",
                        help="measure the current backend, print JSON")
    args = parser.parse_args(argv)
    if args.json:
        print(json.dumps(measure(args.size, args.reps)))
        return 0
    return compare(args.size, args.reps)


if __name__ == "__main__":
    sys.exit(main())
