"""Compiled vs pure-Python kernels: psi matrix fill and the frame simulator.

    python benchmarks/bench_backends.py [--frames N] [--repeat R]
"""
import argparse
import time

import numpy as np

from cranmux import _backend, table_one
from cranmux.simulator import SimulationConfig, simulate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    names = ["python"] + (["cython"] if _backend.NAME == "cython" else [])
    if len(names) == 1:
        print("compiled kernels not built; timing the Python fallback only")

    print(f"{'task':<46}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    psi_cases = [(10, 210, 2.0), (25, 225, 2.0), (12, 212, 1.0)]
    for servers, q_max, mu_f in psi_cases:
        row, mats = [], []
        for n in names:
            k = _backend.get(n)
            t, m = best_of(lambda: k.psi_matrix(servers, q_max, mu_f, 1e-10), args.repeat)
            row.append(t)
            mats.append(np.asarray(m))
        if len(mats) == 2:
            assert np.abs(mats[0] - mats[1]).max() < 1e-9
        _print(f"psi_matrix c={servers} q_max={q_max}", row)

    sims = [("long_term", 20, 10.0), ("long_term", 12, 10.0), ("short_term", None, 10.0)]
    for policy, servers, lam in sims:
        row, fps = [], []
        for n in names:
            sc = SimulationConfig(table_one(lam), policy, servers, args.frames, 1_000, seed=1,
                                  backend=n)
            t, res = best_of(lambda: simulate(sc), args.repeat)
            row.append(t)
            fps.append(res.t2_samples.tobytes())
        if len(fps) == 2:
            assert fps[0] == fps[1], "backends disagree"
        _print(f"simulate {policy} c={servers} ({args.frames} frames)", row)


def _print(label, times):
    speed = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else ""
    print(f"{label:<46}" + "".join(f"{t:>11.3f}s" for t in times) + speed)


if __name__ == "__main__":
    main()
