"""Benchmark: compiled sweep kernel vs the pure-Python fallback.

Runs the record-link Gibbs sweep on block-pair sizes from the synthetic study
(20x30) up to a flat-sampler-sized pair, and reports record updates per second
for both backends plus the end-to-end chain timing on a small study instance.

Usage: python bench/benchmark.py [--quick]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from blocklink import ChainConfig, run_mlbrl
from blocklink import _sweep_py

try:
    from blocklink import _sweep as _compiled
except ImportError:
    _compiled = None

from blocklink.engine import substream
from blocklink.simulation import SimulationConfig, generate_dataset, study_schema


def _problem(rng, n1, n2):
    logR = rng.normal(0.0, 2.0, (n1, n2))
    wmax = max(float(logR.max()), 0.0)
    return (
        np.ascontiguousarray(np.exp(logR - wmax)),
        np.ascontiguousarray(logR),
        np.ones((n1, n2), dtype=np.uint8),
        float(np.exp(-wmax)),
    )


def bench_kernel(n1, n2, sweeps, repeats=3):
    rng = np.random.default_rng(0)
    W, logR, mask, scale = _problem(rng, n1, n2)
    uniforms = rng.random(sweeps * n1)
    rows = []
    backends = [("python", _sweep_py)] + ([("compiled", _compiled)] if _compiled else [])
    for name, mod in backends:
        best = float("inf")
        for _ in range(repeats):
            r = np.full(n1, -1, dtype=np.int64)
            c = np.full(n2, -1, dtype=np.int64)
            t0 = time.perf_counter()
            mod.run_sweeps(W, logR, mask, r, c, 0, 1.0, 1.0, scale, uniforms)
            best = min(best, time.perf_counter() - t0)
        rows.append((name, best, sweeps * n1 / best))
    return rows


def bench_chain(quick):
    cfg = SimulationConfig(s_blocks=6, t_blocks=8, n1s=10, n2t=15, n_links=7)
    f1, f2, _ = generate_dataset(cfg, substream(1, 100))
    iters = 100 if quick else 400
    chain = ChainConfig(iterations=iters, burn_in=iters // 2, sweeps=10, seed=0)
    t0 = time.perf_counter()
    run_mlbrl(f1, f2, study_schema(), chain=chain)
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()

    print(f"compiled kernel available: {_compiled is not None}")
    print()
    print(f"{'pair size':>12} {'sweeps':>7} {'backend':>9} {'seconds':>10} {'updates/s':>12}")
    sizes = [(20, 30, 200), (60, 90, 50), (200, 400, 10)]
    if args.quick:
        sizes = sizes[:2]
    speedups = []
    for n1, n2, sweeps in sizes:
        rows = bench_kernel(n1, n2, sweeps)
        for name, secs, rate in rows:
            print(f"{n1}x{n2:>7} {sweeps:>7} {name:>9} {secs:>10.4f} {rate:>12.0f}")
        if len(rows) == 2:
            speedups.append(rows[0][1] / rows[1][1])
    if speedups:
        print(f"\nkernel speedup (python / compiled): {min(speedups):.0f}x - {max(speedups):.0f}x")
    secs = bench_chain(args.quick)
    from blocklink import BACKEND

    print(f"\nend-to-end chain ({BACKEND} backend): {secs:.2f}s")


if __name__ == "__main__":
    main()
