"""Time one training epoch on each kernel backend.

    python3 benchmarks/bench_kernels.py [--repeats N] [--M M]

Both workloads use the preset architectures and optimizers.  Parameters
after one epoch are compared between backends as a sanity check.
"""
from __future__ import annotations

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from flowmap_ensemble import kernels
from flowmap_ensemble.config import box_for, make_config
from flowmap_ensemble.optim import init_params
from flowmap_ensemble.systems import get_system
from flowmap_ensemble.training import build_dataset


def epoch_seconds(fn, arch, ds, config, repeats):
    x, r = ds.inputs(), ds.residuals()
    widths = np.array(arch.widths, dtype=np.int64)
    method = 0 if config.optimizer == "sgd" else 1
    rng = np.random.default_rng(0)
    params = init_params(arch, rng)
    perm = rng.permutation(ds.M)
    best = float("inf")
    first = None
    for _ in range(repeats):
        p = params.copy()
        m, v = np.zeros_like(p), np.zeros_like(p)
        t0 = time.perf_counter()
        fn(x, r, perm, config.batch_size, widths, p, method, config.learning_rate, m, v, 0)
        best = min(best, time.perf_counter() - t0)
        if first is None:
            first = p
    return best, first


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--M", type=int, default=5000)
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {backends} (default {kernels.BACKEND})")
    print(f"{'workload':<10} {'backend':<9} {'epoch [ms]':>11} {'speedup':>8} {'max |dp|':>10}")
    for preset in ("pendulum", "chaotic"):
        config = make_config(preset, overrides={"M": args.M})
        arch = config.architecture()
        ds = build_dataset(get_system(config.system), box_for(config), config.M, config.dt,
                           config.memory_len, config.substeps, config.data_seed)
        results = {}
        with threadpool_limits(limits=1):
            for name in backends:
                results[name] = epoch_seconds(kernels.BACKENDS[name], arch, ds,
                                              config.train_config(), args.repeats)
        base_t, base_p = results["python"]
        for name in backends:
            t, p = results[name]
            diff = float(np.max(np.abs(p - base_p)))
            print(f"{preset:<10} {name:<9} {1e3 * t:11.2f} {base_t / t:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
