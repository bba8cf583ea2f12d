"""Timing comparison of the compiled kernels against the numpy fallback.

Runs the two hot reductions (pooled per-class stats, RBF block sums) on a
few layer-shaped workloads and prints per-call times plus the largest
relative disagreement between the backends. Usage:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from prunescope import _kernels_py

try:
    from prunescope import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _rel_gap(a, b):
    denom = np.maximum(np.abs(b), 1e-300)
    return float(np.max(np.abs(a - b) / denom))


def bench_pooled(rng, n, c, s, y, repeats):
    acts = rng.normal(size=(n, c, s))
    labels = rng.integers(0, y, size=n).astype(np.int64)
    rows = []
    base = _kernels_py.pooled_class_stats(acts, labels, y)
    t_py = _time(_kernels_py.pooled_class_stats, (acts, labels, y), repeats)
    rows.append(("numpy", t_py, 0.0))
    if _ckernels is not None:
        got = _ckernels.pooled_class_stats(acts, labels, y)
        gap = max(_rel_gap(g, b) for g, b in zip(got[1:], base[1:]))
        t_c = _time(_ckernels.pooled_class_stats, (acts, labels, y), repeats)
        rows.append(("compiled", t_c, gap))
    label = f"pooled_class_stats N={n} C={c} S={s} Y={y}"
    return label, rows


def bench_rbf(rng, n, d, y, repeats):
    x = rng.normal(size=(n, d))
    labels = rng.integers(0, y, size=n).astype(np.int64)
    rows = []
    base = _kernels_py.rbf_block_sums(x, labels, y, 1.0)
    t_py = _time(_kernels_py.rbf_block_sums, (x, labels, y, 1.0), repeats)
    rows.append(("numpy", t_py, 0.0))
    if _ckernels is not None:
        got = _ckernels.rbf_block_sums(x, labels, y, 1.0)
        t_c = _time(_ckernels.rbf_block_sums, (x, labels, y, 1.0), repeats)
        rows.append(("compiled", t_c, _rel_gap(got, base)))
    label = f"rbf_block_sums N={n} D={d} Y={y}"
    return label, rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    if _ckernels is None:
        print("compiled backend not built; timing the fallback only\n")

    cases = [
        bench_pooled(rng, 512, 64, 49, 10, args.repeats),
        bench_pooled(rng, 2048, 128, 16, 100, args.repeats),
        bench_rbf(rng, 400, 16, 10, args.repeats),
        bench_rbf(rng, 1200, 49, 20, args.repeats),
    ]
    for label, rows in cases:
        print(label)
        t_ref = rows[0][1]
        for name, t, gap in rows:
            speed = f"{t_ref / t:5.2f}x" if t > 0 else "  n/a"
            extra = "" if name == "numpy" else f"  max rel gap {gap:.2e}"
            print(f"  {name:<9} {t * 1e3:9.3f} ms  {speed}{extra}")
        print()


if __name__ == "__main__":
    main()
