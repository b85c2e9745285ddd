"""Compare the numba and numpy Monte Carlo kernels.

    python3 benchmarks/bench_kernels.py [--runs N] [--repeat R]

Both backends are timed on the same batch (after one warm-up call, so numba
compilation is excluded) and their click counts are checked for equality.
"""

import argparse
import time

import numpy as np

from cavityreadout import montecarlo
from cavityreadout.params import DetectionChain


def bench(fn, repeat):
    fn()  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = {
        "poisson (N=10 vs 0.1)": (montecarlo.constant_rate_config(10.0, 0.1), DetectionChain()),
        "pumped readout + T1": (
            montecarlo.TrajectoryConfig(
                gamma_p_up=1 / 17.6, t1=2210.0, flux_up=0.02, flux_down=3e-4, background=8e-4
            ),
            DetectionChain(init_fidelity=0.95),
        ),
        "dead time 30 ns + afterpulse": (
            montecarlo.constant_rate_config(10.0, 0.1),
            DetectionChain(dead_time=30.0, afterpulse_prob=0.1),
        ),
    }
    print(f"{'case':32s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}  same")
    for name, (cfg, d) in cases.items():
        tn, a = bench(lambda: montecarlo.simulate_batch(cfg, d, args.runs, backend="numba"), args.repeat)
        tp, b = bench(lambda: montecarlo.simulate_batch(cfg, d, args.runs, backend="numpy"), args.repeat)
        same = np.array_equal(a.click_ptr, b.click_ptr) and np.allclose(a.click_t, b.click_t, rtol=0, atol=1e-9)
        print(f"{name:32s} {tn:10.3f} {tp:10.3f} {tp / tn:8.1f}  {same}")


if __name__ == "__main__":
    main()
