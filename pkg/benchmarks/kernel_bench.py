#!/usr/bin/env python3
"""Time each hot kernel under the numpy fallback and the numba backend.

Run from the repository root:

    python3 benchmarks/kernel_bench.py [--repeats N]

Each kernel is warmed once per backend (the first jitted call includes
compilation) and the best wall time over the repeats is reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from shimmer._kernels import fallback
from shimmer.rng import Rng, stream_key

try:
    from shimmer._kernels import jitted
except ImportError as exc:  # pragma: no cover - numba not installed
    jitted = None
    _JIT_ERROR = str(exc)


def _best_ms(fn, args, repeats: int) -> float:
    fn(*args)  # warm-up: jit compile, allocator, caches
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best * 1e3


def _warp_args(rng: Rng):
    img = rng.uniform(512 * 512).reshape(512, 512)
    u = rng.normal(512 * 512).reshape(512, 512) * 1.5
    v = rng.normal(512 * 512).reshape(512, 512) * 1.5
    return img, u, v


def _blur_args(rng: Rng):
    img = rng.uniform(256 * 256).reshape(256, 256)
    sigma = 0.3 + 1.7 * rng.uniform(256 * 256).reshape(256, 256)
    return img, sigma, 24


def _accum_args(rng: Rng, n=2_000_000, size=128):
    ys = (rng.uniform(n) * size).astype(np.int64)
    xs = (rng.uniform(n) * size).astype(np.int64)
    cp = np.where(rng.uniform(n) < 0.5, 0.2, -0.2)
    return ys, xs, cp, size, size


def _blur_map_args(rng: Rng, n=2_000_000, size=128):
    pix = np.sort((rng.uniform(n) * size * size).astype(np.int64))
    t = (rng.uniform(n) * 100_000).astype(np.float64)
    order = np.lexsort((t, pix))
    t_s = t[order]
    cp_s = np.where(rng.uniform(n) < 0.5, 0.2, -0.2)
    counts = np.bincount(pix, minlength=size * size)
    offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return t_s, cp_s, offsets, 0.0, 100_000.0, 50_000.0, size * size


def _sim_args(rng: Rng, size=128, frames=12):
    n_pixels = size * size
    steps = rng.normal(n_pixels * frames).reshape(n_pixels, frames) * 0.08
    log_frames = np.ascontiguousarray(np.cumsum(steps, axis=1))
    timestamps = np.arange(frames, dtype=np.float64) * 8333.0
    c_base = np.full(n_pixels, 0.2)
    key = np.uint64(stream_key(0, 1))
    return log_frames, timestamps, c_base, 0.01, 0.05, 0.5, key


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per kernel (best is reported)")
    args = parser.parse_args()

    rng = Rng(0)
    cases = [
        ("warp_bilinear      512^2 image", "warp_bilinear", _warp_args(rng)),
        ("blur_variable      256^2, sigma 0.3-2.0", "blur_variable", _blur_args(rng)),
        ("accumulate_polarity 2M events", "accumulate_polarity", _accum_args(rng)),
        ("blur_map_exact     2M events, 128^2", "blur_map_exact", _blur_map_args(rng)),
        ("simulate_events    128^2 x 12 frames", "simulate_events_core", _sim_args(rng)),
    ]

    if jitted is None:
        print(f"numba backend unavailable ({_JIT_ERROR}); timing numpy only")
    header = f"{'kernel':<42}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, name, case_args in cases:
        np_ms = _best_ms(getattr(fallback, name), case_args, args.repeats)
        if jitted is not None:
            nb_ms = _best_ms(getattr(jitted, name), case_args, args.repeats)
            print(f"{label:<42}{np_ms:>10.2f}{nb_ms:>10.2f}{np_ms / nb_ms:>8.1f}x")
        else:
            print(f"{label:<42}{np_ms:>10.2f}{'-':>10}{'-':>9}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
