"""Threshold-crossing event emission from latent frame sequences.

Log intensity is interpolated linearly between frames; every crossing of the
per-pixel running reference by the instantaneous threshold emits one event.
Thresholds have a static per-pixel Gaussian base plus optional per-crossing
jitter; the reference always advances by the pixel's *base* threshold so the
constant-c event integral stays within one threshold of the true signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import simulate_events_core
from .errors import ArgumentError, ValidationError
from .events import EventStream, ThresholdModel
from .images import LOG_FLOOR, FrameSequence, Image
from .rng import Rng, stream_key

# rng stream ids within the model seed
_STREAM_BASE_C = 0
_STREAM_JITTER = 1
_STREAM_NOISE = 2


@dataclass(frozen=True, eq=False)
class SimulatedEvents:
    """Event stream plus the per-pixel base thresholds that produced it."""

    stream: EventStream
    threshold_map: Image
    metadata: dict


def _log_stack(latents: FrameSequence) -> np.ndarray:
    """(n_pixels, n_frames) C-contiguous log intensities, floored."""
    stack = latents.stack()  # (n, h, w)
    logs = np.log(np.maximum(stack, LOG_FLOOR))
    n, h, w = logs.shape
    return np.ascontiguousarray(logs.transpose(1, 2, 0).reshape(h * w, n))


def _poisson_counts(lam: float, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF Poisson draws from uniforms (small lambda)."""
    kmax = int(lam + 10.0 * np.sqrt(lam) + 20.0)
    counts = np.zeros(len(u), dtype=np.int64)
    pmf = np.exp(-lam)
    cdf = pmf
    remaining = u >= cdf
    k = 0
    while remaining.any() and k < kmax:
        k += 1
        pmf *= lam / k
        cdf += pmf
        counts[remaining] = k
        remaining = u >= cdf
    return counts


def _noise_events(
    rng: Rng, n_pixels: int, t_start: int, t_end: int, rate_hz: float
):
    duration_s = max(t_end - t_start, 0) * 1e-6
    lam = rate_hz * duration_s
    if lam <= 0.0:
        return (
            np.empty(0, np.int64),
            np.empty(0, np.int64),
            np.empty(0, np.int8),
        )
    counts = _poisson_counts(lam, rng.uniform(n_pixels))
    total = int(counts.sum())
    if total == 0:
        return (
            np.empty(0, np.int64),
            np.empty(0, np.int64),
            np.empty(0, np.int8),
        )
    px = np.repeat(np.arange(n_pixels, dtype=np.int64), counts)
    span = max(t_end - t_start, 1)
    t = t_start + np.floor(rng.uniform(total) * span).astype(np.int64)
    p = np.where(rng.uniform(total) < 0.5, -1, 1).astype(np.int8)
    return t, px, p


def _apply_refractory(stream: EventStream, refractory_us: int) -> EventStream:
    """Drop events closer than refractory_us to the previous kept event
    at the same pixel (walk in canonical order)."""
    if refractory_us <= 0 or len(stream) == 0:
        return stream
    px = stream.y.astype(np.int64) * stream.width + stream.x
    order = np.lexsort((stream.t, px))
    keep = np.ones(len(stream), dtype=bool)
    # group boundaries in (pixel, t) order
    px_sorted = px[order]
    t_sorted = stream.t[order]
    starts = np.flatnonzero(np.diff(px_sorted, prepend=px_sorted[0] - 1))
    bounds = np.append(starts, len(px_sorted))
    for gi in range(len(starts)):
        last = -np.inf
        for j in range(bounds[gi], bounds[gi + 1]):
            if t_sorted[j] - last >= refractory_us:
                last = t_sorted[j]
            else:
                keep[order[j]] = False
    return EventStream(
        stream.width,
        stream.height,
        stream.t[keep],
        stream.x[keep],
        stream.y[keep],
        stream.p[keep],
    )


def simulate_events(
    latents: FrameSequence,
    model: ThresholdModel,
    noise_rate_hz: float = 0.0,
    refractory_us: int = 0,
) -> SimulatedEvents:
    """Emit a canonically ordered event stream from latent frames.

    noise_rate_hz adds per-pixel Poisson background events with uniform
    times and random polarity; refractory_us suppresses events closer than
    that to the previous event at the same pixel.  Both default off.
    """
    if len(latents) < 2:
        raise ArgumentError(f"need at least 2 latent frames, got {len(latents)}")
    if noise_rate_hz < 0:
        raise ValidationError(f"noise_rate_hz must be >= 0, got {noise_rate_hz}")
    if refractory_us < 0:
        raise ValidationError(f"refractory_us must be >= 0, got {refractory_us}")
    h, w = latents.height, latents.width
    n_pixels = h * w

    base_rng = Rng(model.seed, _STREAM_BASE_C)
    c_base = np.clip(
        model.c_mean + model.c_std * base_rng.normal(n_pixels),
        model.c_min,
        model.c_max,
    )

    log_frames = _log_stack(latents)
    t, px, p = simulate_events_core(
        log_frames,
        np.asarray(latents.timestamps, dtype=np.int64),
        c_base,
        float(model.temporal_jitter_std),
        float(model.c_min),
        float(model.c_max),
        np.uint64(stream_key(model.seed, _STREAM_JITTER)),
    )

    if noise_rate_hz > 0.0:
        nt, npx, npol = _noise_events(
            Rng(model.seed, _STREAM_NOISE),
            n_pixels,
            int(latents.exposure_start),
            int(latents.exposure_end),
            noise_rate_hz,
        )
        t = np.concatenate([t, nt])
        px = np.concatenate([px, npx])
        p = np.concatenate([p.astype(np.int64), npol.astype(np.int64)])

    stream = EventStream(w, h, t, px % w, px // w, p)
    stream = _apply_refractory(stream, refractory_us)

    return SimulatedEvents(
        stream=stream,
        threshold_map=Image(c_base.reshape(h, w)),
        metadata={"c_mean": model.c_mean, "c_std": model.c_std, "seed": model.seed},
    )


def event_count_bound(latents: FrameSequence, c_min: float) -> int:
    """Upper bound on emitted events: sum of ceil(|dlog I| / c_min)."""
    if c_min <= 0:
        raise ArgumentError(f"c_min must be > 0, got {c_min}")
    logs = np.log(np.maximum(latents.stack(), LOG_FLOOR))
    steps = np.abs(np.diff(logs, axis=0))
    return int(np.ceil(steps / c_min).sum())
