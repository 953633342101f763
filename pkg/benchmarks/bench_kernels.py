"""Time the numba kernels against the numpy fallback on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--M 30] [--N 50]

Both backends are imported directly, so the DPIID_NUMBA flag is irrelevant
here. The first numba call (compilation) is excluded from the timings.
"""

import argparse
import time

import numpy as np

from dpiid.datasets import load_dataset
from dpiid.kernels import _nb, _np
from dpiid.model import HyperParams, prior_draws


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--M", type=int, default=30)
    ap.add_argument("--N", type=int, default=50)
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--steps", type=int, default=20_000)
    a = ap.parse_args()

    y = load_dataset("galaxy").y
    hp = HyperParams(M=a.M, N=a.N, s=4, S=2, nu0=20, c=33.3, a_alpha=2, b_alpha=4)
    rng = np.random.default_rng(0)
    th = prior_draws(hp, a.rows, rng)
    al = rng.integers(0, hp.N, size=(a.rows, hp.M))
    u = rng.random((a.rows, hp.M))
    hpv = hp.packed()

    lr = rng.normal(size=a.steps)
    um, ur = rng.random(a.steps), rng.random(a.steps)

    def chain_args():
        d = hp.dim
        S = a.steps // 10
        return (th[0].copy(), al[0].copy(), 0.0, y, hp.N, hp.M, 0, hpv, np.full(d, 0.05),
                np.abs(rng.normal(size=S)), rng.choice([-1.0, 1.0], size=(S, d)),
                rng.random((S, hp.M)), rng.random(S), 0, 0, 1,
                np.empty((S, d)), np.empty((S, hp.M), np.int64))

    cases = {
        "log_weight_ratio_batch": lambda m: m.log_weight_ratio_batch(th, al, y, hp.N, hp.M, 0, hpv),
        "sample_alloc_batch": lambda m: m.sample_alloc_batch(th, u, hp.N),
        "imh_scan": lambda m: m.imh_scan(lr, um, ur, 0.0, 0.01, a.steps),
        "tmcmc_chunk": lambda m: m.tmcmc_chunk(*chain_args()),
    }
    print(f"{'kernel':<26}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in cases.items():
        call(_nb)  # compile
        t_np = best_of(lambda: call(_np), a.repeat)
        t_nb = best_of(lambda: call(_nb), a.repeat)
        print(f"{name:<26}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
