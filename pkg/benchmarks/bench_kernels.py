"""Time the numba kernels against their numpy twins on the acceptance workloads.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends are called in-process by flipping ``_kernels.USE_NUMBA``; the
first numba call (compilation or cache load) is reported separately.
"""
import argparse
import time

import numpy as np

from trimbisim import _kernels
from trimbisim.system import InputGrid, LinearSystem, _sample_grid, discretize, displacement_stack
from trimbisim.trimming import OpenBox

A = np.array([[0.0, 1.0], [-1.0, 2.0]])
B = np.array([[0.0], [1.0]])
C = np.array([[0.0, -4.0]])


def workloads():
    box = OpenBox.from_pairs([(-5.0, 5.0)])
    sys = LinearSystem(A, B, box, InputGrid.regular(box, 0.1), 0.01)
    rng = np.random.default_rng(0)
    tau, dt = 2.75, 1e-3
    ce = displacement_stack(sys, C, tau, dt)
    _, seg = _sample_grid(tau, dt, sys.h)
    U = rng.uniform(-4.52, 4.52, (200, 275, 1))
    e0 = np.repeat(rng.uniform(-0.12, 0.12, (200, 2)), 200, axis=0)
    pi = np.tile(np.arange(200), 200)
    sweep = lambda: _kernels.supervisory_sweep(ce, U, np.minimum(seg, 274), e0, pi, box.lo, box.hi)

    E, G = discretize(A, B, sys.h)
    Ud = rng.uniform(-5, 5, (200, 500, 1))
    x0 = rng.uniform(-1, 1, (200, 2))
    prop = lambda: _kernels.propagate_segments(E, G, x0, Ud)

    us = rng.uniform(-4, 4, (100, 1))
    rk4 = lambda: _kernels.rk4_tracking(A, B, C, np.array([0.2, -0.2]), np.array([0.23, -0.24]),
                                        us, 0.01, 1e-5, 100_000)
    return {"supervisory_sweep (40k pairs x 2751 samples)": sweep,
            "propagate_segments (200 x 500 segments)": prop,
            "rk4_tracking (1e5 steps)": rk4}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels._HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':48s} {'numpy':>9s} {'numba':>9s} {'first':>9s} {'speedup':>8s}")
    for name, fn in workloads().items():
        _kernels.USE_NUMBA = False
        t_np = best_of(fn, args.repeat)
        ref = fn()
        _kernels.USE_NUMBA = True
        t0 = time.perf_counter()
        got = fn()
        first = time.perf_counter() - t0
        t_nb = best_of(fn, args.repeat)
        for a, b in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12), name
        print(f"{name:48s} {t_np:8.3f}s {t_nb:8.3f}s {first:8.3f}s {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
