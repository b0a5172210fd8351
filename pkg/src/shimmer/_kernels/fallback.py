"""Pure-numpy kernel implementations (reference semantics for the backends).

Every function here has a numba twin in ``jitted.py``; the two must agree
numerically (same formulas, same accumulation order per pixel).
"""

from __future__ import annotations

import numpy as np

from ..rng import normal_from_raw, raw64

_U64 = np.uint64


def warp_bilinear(src: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Backward warp: out(x, y) = src(x + u, y + v), bilinear, border-clamped."""
    h, w = src.shape
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    xx = np.clip(xs + u, 0.0, w - 1.0)
    yy = np.clip(ys + v, 0.0, h - 1.0)
    x0f = np.floor(xx)
    y0f = np.floor(yy)
    fx = xx - x0f
    fy = yy - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
    bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
    return (1.0 - fy) * top + fy * bot


def blur_variable(src: np.ndarray, sigma: np.ndarray, rmax: int) -> np.ndarray:
    """Per-pixel Gaussian blur: taps |d| <= 3*sigma(x,y), radius capped at rmax.

    Out-of-bounds taps are dropped and the kernel renormalized, so a constant
    image stays constant.  sigma == 0 pixels pass through unchanged.
    """
    h, w = src.shape
    rad = np.minimum(np.floor(3.0 * sigma), float(rmax)).astype(np.int64)
    rad[sigma <= 0.0] = 0
    big_r = int(rad.max()) if rad.size else 0
    inv2s2 = np.zeros_like(sigma, dtype=np.float64)
    pos = sigma > 0.0
    inv2s2[pos] = 1.0 / (2.0 * sigma[pos] ** 2)

    num = np.zeros((h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for dy in range(-big_r, big_r + 1):
        r0, r1 = max(0, -dy), h - max(0, dy)
        if r0 >= r1:
            continue
        for dx in range(-big_r, big_r + 1):
            c0, c1 = max(0, -dx), w - max(0, dx)
            if c0 >= c1:
                continue
            m = (np.abs(dy) <= rad[r0:r1, c0:c1]) & (np.abs(dx) <= rad[r0:r1, c0:c1])
            if not m.any():
                continue
            wgt = np.where(
                m, np.exp(-(dy * dy + dx * dx) * inv2s2[r0:r1, c0:c1]), 0.0
            )
            num[r0:r1, c0:c1] += wgt * src[r0 + dy : r1 + dy, c0 + dx : c1 + dx]
            den[r0:r1, c0:c1] += wgt
    return num / den


def accumulate_polarity(
    ys: np.ndarray, xs: np.ndarray, cp: np.ndarray, h: int, w: int
) -> np.ndarray:
    """Sum per-event contributions cp at their pixels into an (h, w) map."""
    out = np.zeros((h, w), dtype=np.float64)
    np.add.at(out, (ys, xs), cp)
    return out


def blur_map_exact(
    t_s: np.ndarray,
    cp_s: np.ndarray,
    offsets: np.ndarray,
    t0: float,
    t1: float,
    t_ref: float,
    n_pixels: int,
) -> np.ndarray:
    """Exact piecewise exposure average of exp(running event sum) per pixel.

    Events are pre-sorted by (pixel, time) and restricted to [t0, t1);
    ``offsets`` (n_pixels+1) delimits each pixel's slice.  Returns the flat
    per-pixel factor normalized to the reference time t_ref.
    """
    total = float(t1 - t0)
    counts = offsets[1:] - offsets[:-1]
    e_int = np.full(n_pixels, total, dtype=np.float64)
    a_ref = np.zeros(n_pixels, dtype=np.float64)
    if t_s.size:
        pix = np.repeat(np.arange(n_pixels, dtype=np.int64), counts)
        csum = np.cumsum(cp_s)
        group_base = np.concatenate(([0.0], csum))[offsets[:-1]]
        a_after = csum - group_base[pix]
        next_t = np.empty_like(t_s)
        next_t[:-1] = t_s[1:]
        next_t[-1] = t1
        last_idx = offsets[1:][counts > 0] - 1
        next_t[last_idx] = t1
        contrib = np.exp(a_after) * (next_t - t_s)
        integ = np.bincount(pix, weights=contrib, minlength=n_pixels)
        has = counts > 0
        first_t = np.zeros(n_pixels, dtype=np.float64)
        first_t[has] = t_s[offsets[:-1][has]]
        integ[has] += first_t[has] - t0
        e_int = np.where(has, integ, total)
        before = t_s < t_ref
        a_ref = np.bincount(pix[before], weights=cp_s[before], minlength=n_pixels)
    return (e_int / total) * np.exp(-a_ref)


def simulate_events_core(
    log_frames: np.ndarray,
    timestamps: np.ndarray,
    c_base: np.ndarray,
    jitter_std: float,
    c_min: float,
    c_max: float,
    jitter_key: int,
):
    """Threshold-crossing event emission from log-intensity frames.

    ``log_frames`` is (n_pixels, n_frames) C-contiguous, ``c_base`` flat per
    pixel.  Log intensity is interpolated linearly in time between frames;
    each crossing of the running reference +/- the (jittered) instantaneous
    threshold emits one event and advances the reference by the pixel's base
    threshold.  The j-th crossing at pixel p draws its jitter from counter
    pair (2*(p*2^32+j), ...), so emission order never matters.

    Returns (t, px, p) arrays in emission-batch order (not canonically
    sorted).
    """
    n_pixels, n_frames = log_frames.shape
    pix_ids = np.arange(n_pixels, dtype=np.int64)
    ref = log_frames[:, 0].copy()
    jcount = np.zeros(n_pixels, dtype=np.int64)
    out_t: list[np.ndarray] = []
    out_px: list[np.ndarray] = []
    out_p: list[np.ndarray] = []

    for k in range(n_frames - 1):
        l0 = log_frames[:, k]
        l1 = log_frames[:, k + 1]
        t0 = float(timestamps[k])
        t1 = float(timestamps[k + 1])
        d = l1 - l0
        direction = np.sign(d)
        active = pix_ids[direction != 0.0]
        while active.size:
            if jitter_std > 0.0:
                hbase = (active.astype(np.uint64) << _U64(32)) + jcount[
                    active
                ].astype(np.uint64)
                z = normal_from_raw(
                    raw64(jitter_key, hbase * _U64(2)),
                    raw64(jitter_key, hbase * _U64(2) + _U64(1)),
                )
                c_inst = np.clip(c_base[active] + jitter_std * z, c_min, c_max)
            else:
                c_inst = c_base[active]
            sgn = direction[active]
            target = ref[active] + sgn * c_inst
            hit = np.where(sgn > 0, l1[active] >= target, l1[active] <= target)
            active = active[hit]
            if not active.size:
                break
            target = target[hit]
            sgn = sgn[hit]
            s = np.clip((target - l0[active]) / d[active], 0.0, 1.0)
            te = np.int64(t0) + np.floor(s * (t1 - t0)).astype(np.int64)
            out_t.append(te)
            out_px.append(active.copy())
            out_p.append(sgn.astype(np.int8))
            ref[active] += sgn * c_base[active]
            jcount[active] += 1

    if out_t:
        return (
            np.concatenate(out_t),
            np.concatenate(out_px),
            np.concatenate(out_p),
        )
    return (
        np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.int8),
    )
