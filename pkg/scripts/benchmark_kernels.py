#!/usr/bin/env python3
"""Throughput comparison of the compiled and pure-numpy Gibbs kernels.

Runs the same tempered RBM sweep workload through both backends and
reports sweeps/second plus the speedup ratio.  The two backends consume
identical random streams, so agreement of the pooled statistics is also
checked.
"""

import argparse
import time

import numpy as np

from tempz._kernel import backend_name, get_kernel
from tempz.core import TemperatureLadder
from tempz.rbm import RbmModel, random_rbm, uniform_base
from tempz.tempering import run_chains


def run_backend(backend: str, model, ladder, n_chains, n_sweeps, seed):
    get_kernel(backend)  # raises early if unavailable
    import tempz.rbm as rbm_mod
    old = rbm_mod.get_kernel
    rbm_mod.get_kernel = lambda b="auto": old(backend)
    try:
        t0 = time.perf_counter()
        stats, _ = run_chains(model, ladder, n_chains, n_sweeps, seed)
        elapsed = time.perf_counter() - t0
    finally:
        rbm_mod.get_kernel = old
    return stats, elapsed


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--visible", type=int, default=784)
    ap.add_argument("--hidden", type=int, default=10)
    ap.add_argument("--k", type=int, default=100)
    ap.add_argument("--chains", type=int, default=20)
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = random_rbm(args.visible, args.hidden, args.seed, 0.05)
    model = RbmModel(params, uniform_base(args.visible))
    ladder = TemperatureLadder.make(args.k)
    total = args.chains * args.sweeps

    print(f"workload: {args.visible}x{args.hidden} RBM, K={args.k}, "
          f"{args.chains} chains x {args.sweeps} sweeps "
          f"(default backend: {backend_name()})")

    results = {}
    for backend in ("fallback", "compiled"):
        try:
            stats, elapsed = run_backend(backend, model, ladder,
                                         args.chains, args.sweeps, args.seed)
        except RuntimeError as exc:
            print(f"{backend:>9}: unavailable ({exc})")
            continue
        results[backend] = (stats, elapsed)
        print(f"{backend:>9}: {elapsed:8.3f} s  {total / elapsed:10.0f} sweeps/s")

    if len(results) == 2:
        s_fb, t_fb = results["fallback"]
        s_cy, t_cy = results["compiled"]
        print(f"  speedup: {t_fb / t_cy:.1f}x")
        gap = float(np.max(np.abs(s_fb.c_hat - s_cy.c_hat)))
        print(f"  max |c_hat difference| between backends: {gap:.3g}")


if __name__ == "__main__":
    main()
