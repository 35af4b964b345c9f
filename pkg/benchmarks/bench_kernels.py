"""Time the numba and numpy flavours of every environment kernel.

    python3 benchmarks/bench_kernels.py [--repeat N]

Inputs match one environment step of the shipped scenarios, so the numbers
reflect per-step cost rather than large-array throughput.  The first numba
call (compilation, or a cache load) is excluded.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cola.envs import kernels
from cola.envs.grid import MOVES


def cases(rng: np.random.Generator):
    pos = rng.uniform(-1, 1, (4, 2))
    vel = rng.normal(size=(4, 2))
    cells = rng.choice(100, size=4, replace=False)
    grid = np.stack([cells // 10, cells % 10], 1).astype(np.int64)
    channels = np.array([0, 0, 0, 1], dtype=np.int64)
    blocked = np.zeros(5, dtype=bool)
    return {
        "integrate": (pos, vel, rng.normal(size=(4, 2)), np.ones(4), 0.25, 0.1, 1.0),
        "pairwise_distances": (pos, rng.uniform(-1, 1, (3, 2))),
        "push_out": (pos, vel, rng.uniform(-0.6, 0.6, (2, 2)), np.full((4, 2), 0.4)),
        "grid_windows": (grid, channels, 2, 3, 10, 2),
        "flee_scores": (grid[3], grid[:3], MOVES, 10, blocked),
    }


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20_000)
    args = p.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<20} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, inputs in cases(np.random.default_rng(0)).items():
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        fast(*inputs)
        t_np = timeit.timeit(lambda: slow(*inputs), number=args.repeat) / args.repeat * 1e6
        t_nb = timeit.timeit(lambda: fast(*inputs), number=args.repeat) / args.repeat * 1e6
        print(f"{name:<20} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
