"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from stabkit import _kernels_py

try:
    from stabkit import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(rng):
    img = rng.uniform(size=(288, 512))
    yy, xx = np.mgrid[0:288, 0:512].astype(np.float64)
    u = xx * 1.02 + 0.3 * np.sin(yy / 17) - 4.0
    v = yy * 0.98 + 0.3 * np.cos(xx / 23) + 2.5
    small = rng.uniform(size=(36, 64))
    shifted = np.roll(small, (1, 2), axis=(0, 1))
    return {
        "bilinear_sample 512x288": ("bilinear_sample", (img, u, v)),
        "bilinear_sample 64x36": ("bilinear_sample", (small, xx[:36, :64] + 0.25, yy[:36, :64] - 0.5)),
        "sad_block_match 64x36 b8 r3": ("sad_block_match", (small, shifted, 8, 3)),
        "sad_block_match 512x288 b16 r4": ("sad_block_match", (img, np.roll(img, 3, axis=1), 16, 4)),
    }


def _time(fn, args, repeat):
    n, _ = timeit.Timer(lambda: fn(*args)).autorange()
    best = min(timeit.Timer(lambda: fn(*args)).repeat(repeat, n))
    return best / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, (fn, a) in cases.items():
        tp = _time(getattr(_kernels_py, fn), a, args.repeat)
        if _ckernels is None:
            print(f"{name:34s} {tp * 1e3:10.3f} {'n/a':>10s} {'n/a':>8s}")
            continue
        ref = getattr(_kernels_py, fn)(*a)
        got = getattr(_ckernels, fn)(*a)
        for x, y in zip(ref, got):
            np.testing.assert_allclose(np.asarray(x, float), np.asarray(y, float), rtol=0, atol=1e-12)
        tc = _time(getattr(_ckernels, fn), a, args.repeat)
        print(f"{name:34s} {tp * 1e3:10.3f} {tc * 1e3:10.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
