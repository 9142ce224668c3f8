"""Wall-clock comparison of the compiled and numpy trajectory kernels.

    python benchmarks/bench_trajectories.py --n-traj 2000 --t 200

Both backends consume the same random streams, so the script also checks
that they return identical count records.
"""
import argparse
import time

import numpy as np

from mpentangle.dynamics import DriveParams
from mpentangle.trajectories import compiled_available, simulate

CASES = [("PM", 1.0), ("PM", 3.0), ("MM", 1.0), ("MM", 3.0)]


def timed(backend, state, params, t, n_traj, seed, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        ens = simulate(state, params, params, t, n_traj, seed, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, ens


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-traj", type=int, default=1000)
    parser.add_argument("--t", type=float, default=200.0, help="duration in units of T1")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not compiled_available():
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")

    print(f"n_traj={args.n_traj}  t={args.t:g} T1  best of {args.repeat}")
    print(f"{'state':>5} {'x':>4} {'compiled ms':>12} {'python ms':>10} {'speedup':>8} {'us/traj':>8} identical")
    for state, x in CASES:
        p = DriveParams(x)
        tc, ec = timed("compiled", state, p, args.t, args.n_traj, args.seed, args.repeat)
        tp, ep = timed("python", state, p, args.t, args.n_traj, args.seed, 1)
        same = all(np.array_equal(ec.records[k], ep.records[k]) for k in ec.records)
        print(
            f"{state:>5} {x:4g} {1e3 * tc:12.1f} {1e3 * tp:10.1f} {tp / tc:8.1f} "
            f"{1e6 * tc / args.n_traj:8.1f} {same}"
        )


if __name__ == "__main__":
    main()
