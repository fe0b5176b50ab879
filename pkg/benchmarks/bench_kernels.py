"""Benchmark the compiled metric kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 256,512,1024] [--repeats 5]

Both implementations are exercised on the same random images and checked
for agreement before timing, so the speedup column is apples to apples.
"""

import argparse
import time

import numpy as np

from cl2s.metrics import _reference

try:
    from cl2s.metrics import _fastpath
except ImportError:
    _fastpath = None


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_size(size, repeats):
    rng = np.random.default_rng(0)
    rgb_a = rng.uniform(0, 1, (size, size, 3))
    rgb_b = np.clip(rgb_a + rng.normal(0, 0.05, rgb_a.shape), 0, 1)
    flat_a = np.ascontiguousarray(rgb_a.reshape(-1, 3))
    flat_b = np.ascontiguousarray(rgb_b.reshape(-1, 3))

    rows = []

    lab_np = _reference.srgb_to_lab(rgb_a)
    t_np = _time(lambda: _reference.srgb_to_lab(rgb_a), repeats)
    if _fastpath is not None:
        lab_cy = _fastpath.srgb_to_lab(flat_a).reshape(rgb_a.shape)
        assert np.abs(lab_cy - lab_np).max() < 1e-9, "backends disagree"
        t_cy = _time(lambda: _fastpath.srgb_to_lab(flat_a), repeats)
    else:
        t_cy = None
    rows.append(("srgb_to_lab", t_np, t_cy))

    lab1 = _reference.srgb_to_lab(rgb_a)
    lab2 = _reference.srgb_to_lab(rgb_b)
    flat1 = np.ascontiguousarray(lab1.reshape(-1, 3))
    flat2 = np.ascontiguousarray(lab2.reshape(-1, 3))
    de_np = _reference.ciede2000(lab1, lab2)
    t_np = _time(lambda: _reference.ciede2000(lab1, lab2), repeats)
    if _fastpath is not None:
        de_cy = _fastpath.ciede2000(flat1, flat2).reshape(de_np.shape)
        assert np.abs(de_cy - de_np).max() < 1e-9, "backends disagree"
        t_cy = _time(lambda: _fastpath.ciede2000(flat1, flat2), repeats)
    else:
        t_cy = None
    rows.append(("ciede2000", t_np, t_cy))

    for name, t_np, t_cy in rows:
        if t_cy is None:
            print(f"{size:>5}px  {name:<12} numpy {t_np * 1e3:8.2f} ms   "
                  "compiled: not built")
        else:
            print(f"{size:>5}px  {name:<12} numpy {t_np * 1e3:8.2f} ms   "
                  f"compiled {t_cy * 1e3:8.2f} ms   speedup {t_np / t_cy:5.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="256,512,1024")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if _fastpath is None:
        print("note: compiled kernels unavailable, timing NumPy fallback only")
    for size in (int(s) for s in args.sizes.split(",")):
        bench_size(size, args.repeats)


if __name__ == "__main__":
    main()
