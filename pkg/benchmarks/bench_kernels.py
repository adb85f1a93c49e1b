"""Compare the numba loop kernels with the pure-numpy kernels.

    python benchmarks/bench_kernels.py [--repeats 200]

Both paths are always importable here (the env flag only selects the default
dispatch), so one process times both. Results are checked for agreement first.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from asyncsam import kernels
from asyncsam._accel import HAVE_NUMBA


def _time(fn, repeats):
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--d", type=int, default=20)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--k", type=int, default=4)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 0

    rng = np.random.default_rng(0)
    n, d, h, k = args.n, args.d, args.hidden, args.k
    X = rng.standard_normal((n, d))
    y = rng.integers(0, k, n)
    w_soft = rng.standard_normal(d * k + k) * 0.1
    w_mlp = rng.standard_normal(d * h + h + h * k + k) * 0.1

    cases = {
        "softreg": (lambda idx: kernels.softreg_loss_grad_loops(w_soft, X, y, idx, k, True),
                    lambda idx: kernels.softreg_loss_grad_numpy(w_soft, X, y, idx, k, True)),
        "mlp-tanh": (lambda idx: kernels.mlp_loss_grad_loops(w_mlp, X, y, idx, h, k, kernels.TANH, True),
                     lambda idx: kernels.mlp_loss_grad_numpy(w_mlp, X, y, idx, h, k, kernels.TANH, True)),
        "mlp-relu": (lambda idx: kernels.mlp_loss_grad_loops(w_mlp, X, y, idx, h, k, kernels.RELU, True),
                     lambda idx: kernels.mlp_loss_grad_numpy(w_mlp, X, y, idx, h, k, kernels.RELU, True)),
    }
    print(f"{'kernel':<10} {'batch':>6} {'numba us':>10} {'numpy us':>10} {'speedup':>8}  max|diff|")
    for name, (fast, ref) in cases.items():
        for b in (8, 32, 128, 512, n):
            idx = rng.choice(n, size=b, replace=b > n)
            l1, g1 = fast(idx)
            l2, g2 = ref(idx)
            diff = max(abs(l1 - l2), float(np.max(np.abs(g1 - g2))))
            t_numba = _time(lambda: fast(idx), args.repeats)
            t_numpy = _time(lambda: ref(idx), args.repeats)
            print(f"{name:<10} {b:>6} {t_numba * 1e6:>10.1f} {t_numpy * 1e6:>10.1f} "
                  f"{t_numpy / t_numba:>7.2f}x  {diff:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
