"""Numba @njit kernels; semantics mirror ``fallback.py`` pixel for pixel.

The integer RNG helpers must stay formula-identical to ``shimmer.rng``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_U1 = np.uint64(1)
_U2 = np.uint64(2)
_U3 = np.uint64(3)
_U4 = np.uint64(4)
_U5 = np.uint64(5)
_U7 = np.uint64(7)
_U9 = np.uint64(9)
_U11 = np.uint64(11)
_U17 = np.uint64(17)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_U32 = np.uint64(32)
_U57 = np.uint64(57)
_TWO53 = float(2**-53)


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _U30)) * _C1
    z = (z ^ (z >> _U27)) * _C2
    return z ^ (z >> _U31)


@njit(cache=True)
def _raw64_at(key, counter):
    base = counter * _U4
    s0 = _mix64(key + (base + _U1) * _GOLDEN)
    s1 = _mix64(key + (base + _U2) * _GOLDEN)
    s2 = _mix64(key + (base + _U3) * _GOLDEN)
    s3 = _mix64(key + (base + _U4) * _GOLDEN)
    s2 = s2 ^ s0
    s3 = s3 ^ s1
    s1 = s1 ^ s2
    out = s1 * _U5
    out = ((out << _U7) | (out >> _U57)) * _U9
    return out


@njit(cache=True)
def _normal_at(key, h):
    a = _raw64_at(key, h * _U2)
    b = _raw64_at(key, h * _U2 + _U1)
    u1 = float(a >> _U11) * _TWO53
    u2 = float(b >> _U11) * _TWO53
    r = math.sqrt(-2.0 * math.log1p(-u1))
    return r * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def warp_bilinear(src, u, v):
    h, w = src.shape
    out = np.empty((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            xx = x + u[y, x]
            yy = y + v[y, x]
            if xx < 0.0:
                xx = 0.0
            elif xx > w - 1.0:
                xx = w - 1.0
            if yy < 0.0:
                yy = 0.0
            elif yy > h - 1.0:
                yy = h - 1.0
            x0 = int(math.floor(xx))
            y0 = int(math.floor(yy))
            fx = xx - x0
            fy = yy - y0
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
            bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
            out[y, x] = (1.0 - fy) * top + fy * bot
    return out


@njit(cache=True)
def blur_variable(src, sigma, rmax):
    h, w = src.shape
    out = np.empty((h, w), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            s = sigma[y, x]
            if s <= 0.0:
                out[y, x] = src[y, x]
                continue
            rad = int(math.floor(3.0 * s))
            if rad > rmax:
                rad = rmax
            if rad == 0:
                out[y, x] = src[y, x]
                continue
            inv2s2 = 1.0 / (2.0 * s * s)
            acc = 0.0
            wsum = 0.0
            for dy in range(-rad, rad + 1):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-rad, rad + 1):
                    xx = x + dx
                    if xx < 0 or xx >= w:
                        continue
                    wgt = math.exp(-(dy * dy + dx * dx) * inv2s2)
                    acc += wgt * src[yy, xx]
                    wsum += wgt
            out[y, x] = acc / wsum
    return out


@njit(cache=True)
def accumulate_polarity(ys, xs, cp, h, w):
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(ys.size):
        out[ys[i], xs[i]] += cp[i]
    return out


@njit(cache=True)
def blur_map_exact(t_s, cp_s, offsets, t0, t1, t_ref, n_pixels):
    total = t1 - t0
    out = np.empty(n_pixels, dtype=np.float64)
    for p in range(n_pixels):
        i0 = offsets[p]
        i1 = offsets[p + 1]
        if i0 == i1:
            out[p] = 1.0
            continue
        a = 0.0
        a_ref = 0.0
        integ = 0.0
        prev = t0
        for i in range(i0, i1):
            ti = t_s[i]
            integ += math.exp(a) * (ti - prev)
            if ti < t_ref:
                a_ref += cp_s[i]
            a += cp_s[i]
            prev = ti
        integ += math.exp(a) * (t1 - prev)
        out[p] = (integ / total) * math.exp(-a_ref)
    return out


@njit(cache=True)
def _pixel_events(
    logs, timestamps, cb, jstd, c_min, c_max, key, p, fill, out_t, out_p, pos
):
    # One pixel's crossings across all frame intervals; the counting pass
    # (fill=False) and filling pass must walk identical state.
    n_frames = logs.shape[0]
    ref = logs[0]
    j = 0
    for k in range(n_frames - 1):
        l0 = logs[k]
        l1 = logs[k + 1]
        d = l1 - l0
        if d == 0.0:
            continue
        sgn = 1.0 if d > 0.0 else -1.0
        t0 = timestamps[k]
        t1 = timestamps[k + 1]
        span = float(t1 - t0)
        while True:
            if jstd > 0.0:
                h = (np.uint64(p) << _U32) + np.uint64(j)
                ci = cb + jstd * _normal_at(key, h)
                if ci < c_min:
                    ci = c_min
                elif ci > c_max:
                    ci = c_max
            else:
                ci = cb
            target = ref + sgn * ci
            if sgn > 0.0:
                if l1 < target:
                    break
            else:
                if l1 > target:
                    break
            s = (target - l0) / d
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
            if fill:
                out_t[pos + j] = t0 + np.int64(math.floor(s * span))
                out_p[pos + j] = np.int8(1 if sgn > 0.0 else -1)
            ref += sgn * cb
            j += 1
    return j


@njit(cache=True)
def simulate_events_core(
    log_frames, timestamps, c_base, jitter_std, c_min, c_max, jitter_key
):
    n_pixels = log_frames.shape[0]
    key = np.uint64(jitter_key)
    dummy_t = np.empty(0, dtype=np.int64)
    dummy_p = np.empty(0, dtype=np.int8)
    counts = np.empty(n_pixels, dtype=np.int64)
    for p in range(n_pixels):
        counts[p] = _pixel_events(
            log_frames[p], timestamps, c_base[p], jitter_std, c_min, c_max,
            key, p, False, dummy_t, dummy_p, 0,
        )
    total = int(counts.sum())
    out_t = np.empty(total, dtype=np.int64)
    out_px = np.empty(total, dtype=np.int64)
    out_p = np.empty(total, dtype=np.int8)
    pos = 0
    for p in range(n_pixels):
        n = _pixel_events(
            log_frames[p], timestamps, c_base[p], jitter_std, c_min, c_max,
            key, p, True, out_t, out_p, pos,
        )
        for i in range(n):
            out_px[pos + i] = p
        pos += n
    return out_t, out_px, out_p
