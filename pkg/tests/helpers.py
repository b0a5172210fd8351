"""Shared constructions for the test suite.

Everything here is deterministic: cards, flows and event streams are keyed
by explicit seeds so every assertion in the suite is reproducible bit for
bit.
"""

from __future__ import annotations

import numpy as np

import shimmer as sh
from shimmer.dataset import _center_crop, make_clean_card
from shimmer.rng import Rng


def make_card(seed_base: int, index: int = 0, size: int = 128) -> sh.Image:
    """Synthetic clean card rendered large and center-cropped, as in the
    dataset generator."""
    return _center_crop(make_clean_card(592, 592, Rng(seed_base).substream(index)), size)


def blob_card(size: int, n_blobs: int, blob_sigma: float, contrast: float, rng: Rng) -> sh.Image:
    """Smooth base with isolated Gaussian bumps: a scene whose events come
    from compact, well-separated intensity edges."""
    from shimmer.dataset import _smooth_noise

    base = _smooth_noise(size, size, 24.0, rng.substream(0))
    lo, hi = base.min(), base.max()
    card = 0.35 + 0.25 * (base - lo) / (hi - lo)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    cx = rng.substream(1).uniform(n_blobs) * (size - 20) + 10
    cy = rng.substream(2).uniform(n_blobs) * (size - 20) + 10
    sgn = np.where(rng.substream(3).uniform(n_blobs) < 0.5, -1.0, 1.0)
    for i in range(n_blobs):
        card += sgn[i] * contrast * np.exp(
            -((xx - cx[i]) ** 2 + (yy - cy[i]) ** 2) / (2 * blob_sigma**2)
        )
    return sh.Image(np.clip(card, 0.05, 0.95))


def random_stream(seed: int, n: int, width: int, height: int, t_span: int = 100_000) -> sh.EventStream:
    """Uniformly random (but canonicalized) event stream."""
    r = Rng(seed)
    t = np.sort((r.uniform(n) * t_span).astype(np.int64))
    x = (r.substream(1).uniform(n) * width).astype(np.int64)
    y = (r.substream(2).uniform(n) * height).astype(np.int64)
    p = np.where(r.substream(3).uniform(n) < 0.5, -1, 1)
    return sh.EventStream(width, height, t, x, y, p)


def single_pixel_stream(width: int, height: int, x: int, y: int, events) -> sh.EventStream:
    """Stream from explicit (t, p) pairs at one pixel."""
    t = np.array([e[0] for e in events], dtype=np.int64)
    p = np.array([e[1] for e in events], dtype=np.int64)
    return sh.EventStream(
        width, height, t, np.full(len(t), x, np.int64), np.full(len(t), y, np.int64), p
    )


def two_frame_sequence(i0: float, i1: float, t0: int = 0, t1: int = 1000) -> sh.FrameSequence:
    """Single-pixel two-frame latent sequence for analytic event counts."""
    return sh.FrameSequence(
        frames=(sh.Image(np.full((1, 1), i0)), sh.Image(np.full((1, 1), i1))),
        timestamps=np.array([t0, t1], dtype=np.int64),
        exposure_start=t0,
        exposure_end=t1,
    )
