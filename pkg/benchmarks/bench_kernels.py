#!/usr/bin/env python3
"""Benchmark the time-stepping kernels: numba @njit vs pure numpy.

Builds a stabilized heat closed loop, a batch of random piecewise-constant
forcings, and times the nodal-norm scan and the trajectory propagation on
both backends.  Median of repeated runs; the numba path is warmed up first so
compilation is excluded.

Run:  python3 benchmarks/bench_kernels.py [--n 64] [--cells 2000] [--batch 32]
"""

import argparse
import time

import numpy as np

from stabreg import _kernels, heat, maxreg


def median_time(fn, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--cells", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    cfg = heat.HeatConfig(n=args.n, c2=16.0)
    law, _ = heat.synthesize_heat_feedback(cfg, targets=[-2.0])
    cl = heat.closed_loop_heat(cfg, law)
    a = np.ascontiguousarray(cl.composed.entries)
    e, p = maxreg._propagator_pair(a, 40.0 / args.cells)
    rng = np.random.default_rng(0)
    batch = np.ascontiguousarray(rng.standard_normal((args.cells, args.n, args.batch)))
    single = np.ascontiguousarray(batch[:, :, 0])

    cases = [("norm_scan[numpy]", lambda: _kernels.lti_norm_scan_numpy(a, e, p, batch, 1)),
             ("propagate[numpy]", lambda: _kernels.lti_propagate_numpy(e, p, single, 1))]
    if _kernels.lti_norm_scan_numba is not None:
        _kernels.lti_norm_scan_numba(a, e, p, batch[:8], 1)   # warm up / compile
        _kernels.lti_propagate_numba(e, p, single[:8], 1)
        cases += [("norm_scan[numba]", lambda: _kernels.lti_norm_scan_numba(a, e, p, batch, 1)),
                  ("propagate[numba]", lambda: _kernels.lti_propagate_numba(e, p, single, 1))]
    else:
        print("numba backend unavailable (disabled or not installed); numpy only")

    ref = _kernels.lti_norm_scan_numpy(a, e, p, batch, 1)
    if _kernels.lti_norm_scan_numba is not None:
        alt = _kernels.lti_norm_scan_numba(a, e, p, batch, 1)
        worst = max(np.abs(x - y).max() for x, y in zip(ref, alt))
        print(f"backend agreement (max abs diff): {worst:.3e}")

    print(f"\nstate dim {args.n}, {args.cells} cells, batch {args.batch}, "
          f"median of {args.repeats}")
    print(f"{'kernel':<22}{'time [s]':>12}")
    results = {}
    for name, fn in cases:
        results[name] = median_time(fn, args.repeats)
        print(f"{name:<22}{results[name]:>12.4f}")
    for op in ("norm_scan", "propagate"):
        np_key, nb_key = f"{op}[numpy]", f"{op}[numba]"
        if nb_key in results:
            print(f"{op}: numba speedup x{results[np_key] / results[nb_key]:.2f}")


if __name__ == "__main__":
    main()
