"""Event-side formation quantities.

Given an event stream and contrast threshold c, these operations build the
signed log-ratio map between two instants (event integral), the exposure-
average blur factor E (double integral of the event signal, computed exactly
on event breakpoints), ridge-regularized deblurring, latent reconstruction
at arbitrary instants, per-pixel accumulator sequences, and the normalized
variance map that flags turbulence activity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import accumulate_polarity, blur_map_exact
from .errors import ArgumentError, SingularityError, ValidationError
from .events import EventStream
from .images import Image

EPS_E = 1e-3  # blur-factor clamp floor
DEFAULT_LAMBDA = 1e-3


@dataclass(frozen=True, eq=False)
class BlurMap:
    """Per-pixel positive exposure-average factor E."""

    e: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.e, dtype=np.float64)
        if e.ndim != 2:
            raise ValidationError(f"blur map must be 2D, got shape {e.shape}")
        if not np.isfinite(e).all() or (e <= 0).any():
            raise ValidationError("blur map factors must be finite and > 0")
        object.__setattr__(self, "e", e)

    @property
    def height(self) -> int:
        return self.e.shape[0]

    @property
    def width(self) -> int:
        return self.e.shape[1]


@dataclass(frozen=True, eq=False)
class VarianceMap:
    """Per-pixel normalized turbulence-activity score in [0, 1]."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"variance map must be 2D, got shape {v.shape}")
        if not np.isfinite(v).all() or (v < 0).any() or (v > 1).any():
            raise ValidationError("variance map values must lie in [0, 1]")
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.v.shape[0]

    @property
    def width(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True, eq=False)
class AccumSequence:
    """Per-pixel accumulator values over that pixel's events, in time order.

    CSR layout: values[offsets[i]:offsets[i+1]] is the sequence for flat
    pixel i = y*width + x.  literal_sum mode stores the running sum of
    exp(c_k * p_k); cumulative_product stores exp of the running sum of
    c_k * p_k.
    """

    width: int
    height: int
    values: np.ndarray
    offsets: np.ndarray
    mode: str

    def for_pixel(self, x: int, y: int) -> np.ndarray:
        i = y * self.width + x
        return self.values[self.offsets[i] : self.offsets[i + 1]]

    def counts(self) -> np.ndarray:
        return (self.offsets[1:] - self.offsets[:-1]).reshape(self.height, self.width)


def _c_per_event(stream: EventStream, c) -> np.ndarray:
    """Per-event threshold values from a scalar or per-pixel map."""
    if np.isscalar(c) or (isinstance(c, np.ndarray) and c.ndim == 0):
        cval = float(c)
        if cval <= 0:
            raise ArgumentError(f"threshold c must be > 0, got {cval}")
        return np.full(len(stream), cval)
    arr = c.data if isinstance(c, Image) else np.asarray(c, dtype=np.float64)
    if arr.shape != (stream.height, stream.width):
        raise ArgumentError(
            f"threshold map {arr.shape} does not match sensor "
            f"{stream.height}x{stream.width}"
        )
    if (arr <= 0).any():
        raise ArgumentError("threshold map must be > 0 everywhere")
    return arr[stream.y, stream.x]


def event_integral(stream: EventStream, c, t_ref: int, t: int) -> np.ndarray:
    """Signed per-pixel sum of c*p over events in [min(t_ref,t), max(t_ref,t)).

    exp of the result maps the latent at t_ref to the latent at t; the map is
    negated when t < t_ref.  Returned as a plain (H, W) float array since
    log-ratios are signed.
    """
    lo, hi = (t_ref, t) if t_ref <= t else (t, t_ref)
    sign = 1.0 if t >= t_ref else -1.0
    i0 = int(np.searchsorted(stream.t, lo, side="left"))
    i1 = int(np.searchsorted(stream.t, hi, side="left"))
    if i0 == i1:
        return np.zeros((stream.height, stream.width))
    cp = _c_per_event(stream, c)[i0:i1] * stream.p[i0:i1]
    out = accumulate_polarity(
        stream.y[i0:i1].astype(np.int64),
        stream.x[i0:i1].astype(np.int64),
        np.ascontiguousarray(cp, dtype=np.float64),
        stream.height,
        stream.width,
    )
    return sign * out


def _pixel_sorted(stream: EventStream, i0: int, i1: int):
    """Events [i0:i1) regrouped by pixel (time order kept), CSR offsets."""
    n_pixels = stream.height * stream.width
    px = stream.y[i0:i1].astype(np.int64) * stream.width + stream.x[i0:i1]
    order = np.argsort(px, kind="stable")
    counts = np.bincount(px, minlength=n_pixels)
    offsets = np.zeros(n_pixels + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return order, offsets


def blur_map(
    stream: EventStream,
    c,
    exposure_start: int,
    exposure_end: int,
    t_ref: int,
    n_samples: int = 0,
    mode: str = "exact",
) -> BlurMap:
    """Exposure-average blur factor E(x, y) = (1/T) * integral of
    exp(running event sum relative to t_ref) over [exposure_start,
    exposure_end).

    "exact" integrates the piecewise-constant signal on event breakpoints;
    "grid" is a uniform n_samples midpoint estimator kept as a cross-check.
    """
    if exposure_start >= exposure_end:
        raise ArgumentError(
            f"empty exposure window [{exposure_start}, {exposure_end})"
        )
    if not (exposure_start <= t_ref <= exposure_end):
        raise ArgumentError(
            f"t_ref {t_ref} outside exposure [{exposure_start}, {exposure_end}]"
        )
    if mode == "grid":
        if n_samples < 2:
            raise ArgumentError(f"grid mode needs n_samples >= 2, got {n_samples}")
        total = float(exposure_end - exposure_start)
        acc = np.zeros((stream.height, stream.width))
        for j in range(n_samples):
            tj = exposure_start + (j + 0.5) * total / n_samples
            acc += np.exp(event_integral(stream, c, t_ref, tj))
        return BlurMap(acc / n_samples)
    if mode != "exact":
        raise ArgumentError(f"unknown blur_map mode {mode!r}")

    i0 = int(np.searchsorted(stream.t, exposure_start, side="left"))
    i1 = int(np.searchsorted(stream.t, exposure_end, side="left"))
    cp = _c_per_event(stream, c)[i0:i1] * stream.p[i0:i1]
    order, offsets = _pixel_sorted(stream, i0, i1)
    t_s = stream.t[i0:i1][order].astype(np.float64)
    cp_s = np.ascontiguousarray(cp[order], dtype=np.float64)
    flat = blur_map_exact(
        t_s,
        cp_s,
        offsets,
        float(exposure_start),
        float(exposure_end),
        float(t_ref),
        stream.height * stream.width,
    )
    return BlurMap(flat.reshape(stream.height, stream.width))


def _window(stream: EventStream, exposure_start, exposure_end):
    """Default exposure window: the stream's covered range."""
    if exposure_start is None:
        exposure_start = int(stream.t[0]) if len(stream) else 0
    if exposure_end is None:
        exposure_end = int(stream.t[-1]) + 1 if len(stream) else 1
    return exposure_start, exposure_end


def edi_reconstruct(
    turbulent: Image,
    stream: EventStream,
    c,
    t_ref: int,
    lam: float = DEFAULT_LAMBDA,
    exposure_start: int | None = None,
    exposure_end: int | None = None,
) -> Image:
    """Sharp-but-tilted estimate: turbulent * E / (E^2 + lambda) per pixel.

    lambda=0 is plain division by E and raises SingularityError if any E
    falls below 1e-3; otherwise E is clamped to >= 1e-3 before the ridge.
    """
    if not isinstance(turbulent, Image):
        turbulent = Image(np.asarray(turbulent))
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam}")
    if len(stream) == 0:
        e = np.ones((turbulent.height, turbulent.width))
    else:
        inferred = exposure_start is None and exposure_end is None
        exposure_start, exposure_end = _window(stream, exposure_start, exposure_end)
        if inferred:
            # keep t_ref valid for windows derived from the observed events
            t_ref = min(max(t_ref, exposure_start), exposure_end)
        e = blur_map(stream, c, exposure_start, exposure_end, t_ref).e
    if lam == 0.0 and (e < EPS_E).any():
        raise SingularityError(
            f"blur factor as low as {e.min():.3e} with lambda=0; "
            f"set lambda > 0 to regularize"
        )
    e = np.maximum(e, EPS_E)
    if turbulent.channels == 1:
        out = turbulent.data * e / (e * e + lam)
    else:
        out = turbulent.data * (e / (e * e + lam))[:, :, None]
    return Image(out)


def latent_at(
    turbulent: Image,
    stream: EventStream,
    c,
    t_ref: int,
    t: int,
    lam: float = DEFAULT_LAMBDA,
    exposure_start: int | None = None,
    exposure_end: int | None = None,
) -> Image:
    """Latent frame at time t: the t_ref reconstruction propagated by the
    event integral from t_ref to t."""
    base = edi_reconstruct(turbulent, stream, c, t_ref, lam, exposure_start, exposure_end)
    ratio = np.exp(event_integral(stream, c, t_ref, t))
    if base.channels == 1:
        return Image(base.data * ratio)
    return Image(base.data * ratio[:, :, None])


def accumulate(stream: EventStream, c, mode: str = "literal_sum") -> AccumSequence:
    """Per-pixel accumulator sequence over the pixel's events in time order.

    literal_sum: running sum of exp(c_k * p_k) (strictly increasing).
    cumulative_product: exp of the running sum of c_k * p_k.
    """
    if mode not in ("literal_sum", "cumulative_product"):
        raise ArgumentError(f"unknown accumulation mode {mode!r}")
    cp = _c_per_event(stream, c) * stream.p
    order, offsets = _pixel_sorted(stream, 0, len(stream))
    cp_s = cp[order]
    if mode == "literal_sum":
        terms = np.exp(cp_s)
    else:
        terms = cp_s
    csum = np.cumsum(terms)
    base = np.concatenate(([0.0], csum))[offsets[:-1]]
    counts = offsets[1:] - offsets[:-1]
    pix = np.repeat(np.arange(len(offsets) - 1, dtype=np.int64), counts)
    seg = csum - base[pix] if len(csum) else csum
    values = seg if mode == "literal_sum" else np.exp(seg)
    return AccumSequence(
        width=stream.width,
        height=stream.height,
        values=values,
        offsets=offsets,
        mode=mode,
    )


def raw_variance(accum: AccumSequence) -> np.ndarray:
    """Per-pixel variance of the accumulator values; 0 when N_e <= 1."""
    n_pixels = accum.height * accum.width
    counts = (accum.offsets[1:] - accum.offsets[:-1]).astype(np.float64)
    pix = np.repeat(np.arange(n_pixels, dtype=np.int64), counts.astype(np.int64))
    s1 = np.bincount(pix, weights=accum.values, minlength=n_pixels)
    s2 = np.bincount(pix, weights=accum.values**2, minlength=n_pixels)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / counts
        raw = s2 / counts - mean * mean
    raw[counts <= 1] = 0.0
    # guard tiny negative values from cancellation
    return np.maximum(raw, 0.0).reshape(accum.height, accum.width)


def variance_map(stream: EventStream, c, mode: str = "literal_sum") -> VarianceMap:
    """Per-pixel accumulator variance, robustly min-max normalized.

    Normalization stretches the 1st-99th percentile range of the raw
    variance image to [0, 1] and clamps; a degenerate range maps to 0.
    """
    raw = raw_variance(accumulate(stream, c, mode))
    lo, hi = np.percentile(raw, (1.0, 99.0))
    # Uniform activity leaves only float rounding noise in the range; don't
    # stretch that to full scale.
    if hi - lo <= max(1e-12, 1e-9 * hi):
        return VarianceMap(np.zeros_like(raw))
    return VarianceMap(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))
