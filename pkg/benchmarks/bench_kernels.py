#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends.

Times the per-image summary kernel over a cohort-sized batch of MC dropout
runs, and the conv1d forward/backward pair used by the 1D-CNN aggregator.
Both backends are checked for agreement before timing.

Usage::

    python benchmarks/bench_kernels.py [--images 15000] [--runs 100] [--repeat 5]
"""
import argparse
import time

import numpy as np

from strokeunc import _kernels


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation for numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(name, fn, repeat):
    row = {}
    for backend in ("numpy", "numba"):
        with _kernels.use_backend(backend):
            row[backend] = best_of(fn, repeat)
    speedup = row["numpy"] / row["numba"]
    print(f"{name:<28} numpy {row['numpy'] * 1e3:9.2f} ms   numba {row['numba'] * 1e3:9.2f} ms   x{speedup:6.1f}")
    return row


def check_agreement(p, x, W, g):
    with _kernels.use_backend("numpy"):
        ref = _kernels.image_summaries(p), _kernels.conv1d_forward(x, W, W[0, 0]), _kernels.conv1d_backward(x, W, g)
    with _kernels.use_backend("numba"):
        got = _kernels.image_summaries(p), _kernels.conv1d_forward(x, W, W[0, 0]), _kernels.conv1d_backward(x, W, g)
    for a, b in zip(ref[0], got[0]):
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got[1], ref[1], rtol=0, atol=1e-12)
    for a, b in zip(ref[2], got[2]):
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=15000)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    p = rng.beta(0.5, 0.5, size=(args.images, args.runs))
    # a batch of 2 patients, 46 slices, 100 histogram channels, 16 filters
    x = rng.random((2, 46, 100))
    W = rng.normal(size=(3, 100, 16))
    b = np.zeros(16)
    g = rng.normal(size=(2, 44, 16))
    check_agreement(p, x, W, g)

    print(f"images={args.images} T={args.runs} repeat={args.repeat} (best of)")
    bench("image_summaries", lambda: _kernels.image_summaries(p), args.repeat)
    bench("conv1d_forward", lambda: _kernels.conv1d_forward(x, W, b), args.repeat * 20)
    bench("conv1d_backward", lambda: _kernels.conv1d_backward(x, W, g), args.repeat * 20)


if __name__ == "__main__":
    main()
