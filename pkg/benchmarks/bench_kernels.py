"""Compiled versus numpy exit samplers.

    python benchmarks/bench_kernels.py [--n 100000] [--repeat 3]

Prints wall time per backend and the speed-up for walk on spheres and the
time-stepped sampler, plus the median exit radius as a sanity check.
"""
import argparse
import time

import numpy as np

from sbmpot import _backend
from sbmpot.bernstein import Stable
from sbmpot.geometry import Domain
from sbmpot.kernels import ProcessModel
from sbmpot.simulate import exit_sample_timestep, exit_sample_wos


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=100000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        _backend.get("compiled")
    except ImportError:
        print("compiled backend not built; nothing to compare")
        return
    model = ProcessModel(2, Stable(1.0))
    cases = {
        "wos box": lambda b: exit_sample_wos(1.0, Domain.parse("box(-1 -1; 1 1)"), np.array([0.9, 0.0]), 0,
                                             n_paths=args.n, backend=b, workers=1),
        "wos union": lambda b: exit_sample_wos(1.0, Domain.parse("union(ball(0 0; 1), box(0 -0.5; 2 0.5))"),
                                               np.zeros(2), 0, n_paths=args.n, backend=b, workers=1),
        "timestep ball": lambda b: exit_sample_timestep(model, Domain.parse("ball(0 0; 1)"), np.zeros(2), 1e-3, 0,
                                                        n_paths=args.n // 10, backend=b, workers=1),
    }
    print(f"{'case':<16}{'compiled s':>12}{'python s':>12}{'speed-up':>10}{'med|Y| c/py':>18}")
    for name, fn in cases.items():
        tc, bc = best_of(lambda: fn("compiled"), args.repeat)
        tp, bp = best_of(lambda: fn("python"), args.repeat)
        rc = np.median(np.linalg.norm(bc.exit_position, axis=1))
        rp = np.median(np.linalg.norm(bp.exit_position, axis=1))
        print(f"{name:<16}{tc:>12.3f}{tp:>12.3f}{tp / tc:>10.1f}{rc:>9.3f}/{rp:<8.3f}")


if __name__ == "__main__":
    main()
