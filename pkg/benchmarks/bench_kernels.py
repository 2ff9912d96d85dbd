"""Benchmark: compiled kernels vs the numpy fallback.

Times the three hot paths (batch pair classification, the exhaustive grid
search, and filtered rollouts) on both backends and prints a comparison
table. Results are best-of-N wall times.

Run from the repository root:  python benchmarks/bench_kernels.py
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ttcbarrier import get_kernels


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def make_cases(rows: int, resolution: int, rollouts: int, steps: int):
    rng = np.random.default_rng(8)
    gap = rng.uniform(-5.0, 150.0, rows)
    dv = rng.uniform(-10.0, 25.0, rows)
    axes = (
        np.linspace(1.0, 100.0, resolution),
        np.linspace(0.5, 20.0, resolution),
        np.linspace(-6.0, 3.0, resolution),
        np.linspace(-6.0, 3.0, resolution),
    )
    profiles = [
        (
            np.repeat(rng.uniform(-4.0, 2.0, 8), steps // 8 + 1)[:steps],
            np.repeat(rng.uniform(-2.0, 2.0, 8), steps // 8 + 1)[:steps],
            float(rng.uniform(20.0, 80.0)),
            float(rng.uniform(16.0, 30.0)),
        )
        for _ in range(rollouts)
    ]

    def bench_classify(kernels):
        return lambda: kernels.classify_pairs(gap, dv, 3.0)

    def bench_grid(kernels):
        # closed mode scans the whole grid (nothing to find)
        return lambda: kernels.grid_search(*axes, 3.0, True, 1e-9)

    def bench_rollout(kernels):
        def run():
            for lead, cmd, x_l0, v_f0 in profiles:
                kernels.rollout_steps(
                    0.0, v_f0, x_l0, 20.0, 5.0, cmd, lead,
                    3.0, 0.5, -6.0, 3.0, 1e-9, 0.04, True,
                )

        return run

    return {
        f"classify_pairs ({rows:,} rows)": bench_classify,
        f"grid_search (closed, {resolution}^4 points)": bench_grid,
        f"rollout_steps ({rollouts} x {steps} steps)": bench_rollout,
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=2_000_000)
    parser.add_argument("--resolution", type=int, default=50)
    parser.add_argument("--rollouts", type=int, default=200)
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    backends = {}
    try:
        backends["compiled"] = get_kernels("compiled")
    except ImportError:
        print("compiled extension not built; benchmarking the fallback only")
    backends["python"] = get_kernels("python")

    cases = make_cases(args.rows, args.resolution, args.rollouts, args.steps)
    width = max(len(name) for name in cases)
    header = f"{'case':<{width}}  " + "".join(f"{name:>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, factory in cases.items():
        times = {b: best_of(factory(kernels), args.repeats) for b, kernels in backends.items()}
        row = f"{name:<{width}}  " + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in times)
        if len(times) == 2:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
