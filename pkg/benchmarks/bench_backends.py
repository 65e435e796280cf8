"""Time the numba and numpy survival kernels on the same paths.

    python3 benchmarks/bench_backends.py [--paths N] [--dt DT]

Both backends consume identical counter streams, so the survivor counts must
agree exactly; the script checks this and reports ns per path-step.
"""
import argparse
import time

import numpy as np

from smalldev.mc import simulate_paths
from smalldev.model import Ball, Box, DiffusionModel

CASES = {
    "interval": (DiffusionModel.from_strings(["0"], [["1"]], 0.5), Box((0.0,), (1.0,)), [0.5]),
    "square-cross": (
        DiffusionModel.from_strings(["0.3*sin(t)", "-x1"], [["1", "0.5"], ["0", "0.866"]], 0.2),
        Box((0.0, 0.0), (1.0, 1.0)), [0.5, 0.5]),
    "disk": (DiffusionModel.from_strings(["-x2", "x1"], [["1", "0"], ["0", "1"]], 0.3),
             Ball(1.0, 2), [0.0, 0.0]),
}


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    streams = np.arange(args.paths, dtype=np.uint64)
    print(f"{'case':<14}{'backend':<8}{'seconds':>10}{'ns/step':>10}{'survivors':>11}")
    for name, (m, dom, x0) in CASES.items():
        T = m.horizon
        steps = args.paths * int(round(T / args.dt))
        # compile outside the timed region
        simulate_paths(m, dom, [x0], streams[:10], T, args.dt, 1, backend="numba")
        counts = {}
        for backend in ("numba", "numpy"):
            sec, alive = _time(lambda: simulate_paths(m, dom, [x0], streams, T, args.dt, 1,
                                                      backend=backend), args.repeat)
            counts[backend] = int(alive.sum())
            # upper bound on work: absorbed paths stop early
            print(f"{name:<14}{backend:<8}{sec:>10.3f}{1e9 * sec / steps:>10.1f}{counts[backend]:>11}")
        if counts["numba"] != counts["numpy"]:
            raise SystemExit(f"{name}: backends disagree {counts}")


if __name__ == "__main__":
    main()
