"""Time the numba kernels against their numpy twins.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Shapes mirror
the default experiment: 64-dim trunk features, 32 attention units, bags of
30-60 instances split into 5 pseudo-bags, and a 64x64 feature covariance.
"""
import argparse
import timeit

import numpy as np

from weaksupcon._kernels import numba_backend, numpy_backend


def cases(rng):
    k, h = 64, 32
    V = rng.standard_normal((h, k)) / np.sqrt(k)
    w = rng.standard_normal(h) / np.sqrt(h)
    c = rng.standard_normal(k) * 0.1
    F = rng.standard_normal((48, k))
    bounds = np.array([0, 10, 20, 29, 38, 48])
    x = rng.standard_normal((4000, k)) @ rng.standard_normal((k, k))
    C = np.cov(x.T)
    Q0 = np.linalg.qr(rng.standard_normal((k, 2)))[0]
    return {
        "attention_pool (48x64)": lambda b: b.attention_pool(F, V, w),
        "abmil_bag_grad (48x64, 5 parts)": lambda b: b.abmil_bag_grad(F, bounds, V, w, c, 0.1, 1.0),
        "top2_eigh (64x64)": lambda b: b.top2_eigh(C, Q0.copy(), 1e-13, 200000),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args()

    backends = {"numpy": numpy_backend}
    if numba_backend is not None:
        backends["numba"] = numba_backend
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}" + "".join(f"{name + ' (us)':>14}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        times = {}
        for name, mod in backends.items():
            fn(mod)  # compile / warm up
            best = min(timeit.repeat(lambda: fn(mod), repeat=args.repeat, number=args.number))
            times[name] = best / args.number * 1e6
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{label:<34}" + "".join(f"{t:>14.1f}" for t in times.values()) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
