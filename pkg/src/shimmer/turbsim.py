"""Statistical turbulence synthesis: tilt fields, variable blur, latents.

The degradation is the two-operator approximation: geometric tilt (warp)
followed by spatially varying blur, averaged over latent frames plus noise.
Tilt fields are Gaussian random fields (white noise smoothed by a periodic
Gaussian kernel) with AR(1) temporal correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import blur_variable, warp_bilinear
from .errors import ArgumentError, ValidationError
from .images import FrameSequence, Image
from .rng import Rng

# Kernel std that puts the smoothed field's autocorrelation at lag rho at
# e^{-1/2} of its lag-0 value: the autocorrelation of noise smoothed with a
# Gaussian of std s is Gaussian with std s*sqrt(2), so s = rho/sqrt(2).
_KERNEL_STD_FACTOR = 1.0 / np.sqrt(2.0)

MAX_BLUR_RADIUS = 24  # hard cap on per-pixel kernel radius (taps = 2r+1)


@dataclass(frozen=True, eq=False)
class TiltFlow:
    """Per-pixel displacement field; out(x, y) samples in(x+u, y+v)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValidationError(f"flow fields must be matching 2D arrays, got {u.shape} / {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValidationError("flow fields must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def __neg__(self) -> "TiltFlow":
        return TiltFlow(-self.u, -self.v)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class TurbulenceParams:
    """Knobs of the statistical turbulence model.

    sigma_tilt    marginal tilt std (pixels)
    rho           spatial correlation length (pixels)
    tau_corr      AR(1) coefficient per latent step, in [0, 1)
    sigma_blur0   per-latent diffraction blur std (pixels)
    sigma_noise   additive Gaussian noise std on the long exposure
    n_latents     latent frames per exposure
    fps_latent    latent frame rate
    zero_mean_tilt  subtract the temporal mean tilt so the sequence sums to 0
    """

    sigma_tilt: float = 1.5
    rho: float = 16.0
    tau_corr: float = 0.9
    sigma_blur0: float = 0.3
    sigma_noise: float = 0.0
    n_latents: int = 12
    fps_latent: float = 120.0
    zero_mean_tilt: bool = False

    def __post_init__(self):
        if self.sigma_tilt < 0:
            raise ValidationError(f"sigma_tilt must be >= 0, got {self.sigma_tilt}")
        if self.rho <= 0:
            raise ArgumentError(f"rho must be > 0, got {self.rho}")
        if not (0.0 <= self.tau_corr < 1.0):
            raise ValidationError(f"tau_corr must be in [0, 1), got {self.tau_corr}")
        if self.sigma_blur0 < 0:
            raise ValidationError(f"sigma_blur0 must be >= 0, got {self.sigma_blur0}")
        if self.sigma_noise < 0:
            raise ValidationError(f"sigma_noise must be >= 0, got {self.sigma_noise}")
        if self.n_latents < 2:
            raise ArgumentError(f"n_latents must be >= 2, got {self.n_latents}")
        if self.fps_latent <= 0:
            raise ValidationError(f"fps_latent must be > 0, got {self.fps_latent}")


def _periodic_gaussian(h: int, w: int, std: float) -> np.ndarray:
    """Unnormalized Gaussian kernel on the (h, w) torus, centered at (0, 0)."""
    dy = np.minimum(np.arange(h), h - np.arange(h)).astype(np.float64)
    dx = np.minimum(np.arange(w), w - np.arange(w)).astype(np.float64)
    gy = np.exp(-0.5 * (dy / std) ** 2)
    gx = np.exp(-0.5 * (dx / std) ** 2)
    return np.outer(gy, gx)


def gen_tilt_field(width: int, height: int, sigma_tilt: float, rho: float, rng: Rng) -> TiltFlow:
    """Independent Gaussian random fields for u and v.

    White noise is convolved (circularly, via FFT) with a Gaussian kernel and
    rescaled so the per-pixel marginal std equals sigma_tilt exactly in
    expectation: for unit white noise, Var[conv] = sum(kernel^2).
    """
    if rho <= 0:
        raise ArgumentError(f"rho must be > 0, got {rho}")
    if sigma_tilt < 0:
        raise ValidationError(f"sigma_tilt must be >= 0, got {sigma_tilt}")
    kernel = _periodic_gaussian(height, width, rho * _KERNEL_STD_FACTOR)
    scale = sigma_tilt / np.sqrt((kernel**2).sum())
    kf = np.fft.rfft2(kernel)
    noise = rng.normal(2 * height * width).reshape(2, height, width)
    u = np.fft.irfft2(np.fft.rfft2(noise[0]) * kf, s=(height, width)) * scale
    v = np.fft.irfft2(np.fft.rfft2(noise[1]) * kf, s=(height, width)) * scale
    return TiltFlow(u, v)


def gen_tilt_sequence(params: TurbulenceParams, width: int, height: int, rng: Rng) -> list:
    """AR(1) sequence of tilt fields: tau_{k+1} = a*tau_k + sqrt(1-a^2)*fresh."""
    a = params.tau_corr
    b = float(np.sqrt(1.0 - a * a))
    us = np.empty((params.n_latents, height, width))
    vs = np.empty((params.n_latents, height, width))
    for k in range(params.n_latents):
        fresh = gen_tilt_field(width, height, params.sigma_tilt, params.rho, rng.substream(k))
        if k == 0:
            us[0], vs[0] = fresh.u, fresh.v
        else:
            us[k] = a * us[k - 1] + b * fresh.u
            vs[k] = a * vs[k - 1] + b * fresh.v
    if params.zero_mean_tilt:
        us -= us.mean(axis=0)
        vs -= vs.mean(axis=0)
    return [TiltFlow(us[k], vs[k]) for k in range(params.n_latents)]


def apply_tilt(image: Image, flow: TiltFlow) -> Image:
    """Backward bilinear warp, border-clamped: out(x, y) = in(x+u, y+v)."""
    if not isinstance(image, Image):
        image = Image(np.asarray(image))
    if (image.height, image.width) != (flow.height, flow.width):
        raise ArgumentError(
            f"flow {flow.height}x{flow.width} does not match image "
            f"{image.height}x{image.width}"
        )
    if image.channels == 1:
        return Image(warp_bilinear(image.data, flow.u, flow.v))
    out = np.empty_like(image.data)
    for ch in range(3):
        out[:, :, ch] = warp_bilinear(np.ascontiguousarray(image.data[:, :, ch]), flow.u, flow.v)
    return Image(out)


def apply_blur(image: Image, sigma_field) -> Image:
    """Per-pixel Gaussian blur with local std sigma_field(x, y).

    Kernels are truncated at 3 sigma, renormalized over in-bounds taps;
    sigma = 0 pixels pass through unchanged.
    """
    if not isinstance(image, Image):
        image = Image(np.asarray(image))
    sig = sigma_field.data if isinstance(sigma_field, Image) else np.asarray(sigma_field, dtype=np.float64)
    if np.isscalar(sigma_field) or sig.ndim == 0:
        sig = np.full((image.height, image.width), float(sigma_field))
    if sig.shape != (image.height, image.width):
        raise ArgumentError(
            f"sigma field {sig.shape} does not match image "
            f"{image.height}x{image.width}"
        )
    if not np.isfinite(sig).all():
        raise ValidationError("sigma field must be finite")
    if (sig < 0).any():
        raise ValidationError("sigma field must be >= 0")
    if sig.max() == 0.0:
        return image
    if image.channels == 1:
        return Image(blur_variable(image.data, sig, MAX_BLUR_RADIUS))
    out = np.empty_like(image.data)
    for ch in range(3):
        out[:, :, ch] = blur_variable(np.ascontiguousarray(image.data[:, :, ch]), sig, MAX_BLUR_RADIUS)
    return Image(out)


def _running_mean(arrays: list) -> np.ndarray:
    """Incremental mean m += (x - m)/k: bit-exact when all inputs are equal."""
    mean = arrays[0].astype(np.float64, copy=True)
    for k, arr in enumerate(arrays[1:], start=2):
        mean += (arr - mean) / k
    return mean


@dataclass(frozen=True, eq=False)
class TurbulentRender:
    """Output bundle of render_turbulent."""

    turbulent: Image
    latents: FrameSequence
    tilt_ref: TiltFlow
    sigma_noise_used: float


def render_turbulent(clean: Image, params: TurbulenceParams, rng: Rng) -> TurbulentRender:
    """Long-exposure turbulent image as the mean of tilted+blurred latents.

    latent_k = blur(warp(clean, tilt_k), sigma_blur0); the emitted turbulent
    frame is their mean plus Gaussian noise, clamped to [0, 1].  Latent
    timestamps sit at interval midpoints of a uniform fps_latent grid so the
    discrete mean matches a continuous exposure average.  tilt_ref is the
    tilt of the mid-exposure reference latent (index n//2).  Color inputs
    share one tilt sequence across channels; emitted latents are luminance.
    """
    if not isinstance(clean, Image):
        clean = Image(np.asarray(clean))
    h, w = clean.height, clean.width
    n = params.n_latents
    tilts = gen_tilt_sequence(params, w, h, rng.substream(0))
    sigma_field = np.full((h, w), params.sigma_blur0)

    gray = Image(clean.data if clean.channels == 1 else clean.data.mean(axis=2))
    latent_frames = []
    for k in range(n):
        latent_frames.append(apply_blur(apply_tilt(gray, tilts[k]), sigma_field))

    if clean.channels == 1:
        stack_mean = _running_mean([f.data for f in latent_frames])
    else:
        stack_mean = _running_mean(
            [apply_blur(apply_tilt(clean, tilts[k]), sigma_field).data for k in range(n)]
        )

    turbulent = stack_mean
    if params.sigma_noise > 0:
        noise = rng.substream(1).normal(turbulent.size).reshape(turbulent.shape)
        turbulent = turbulent + params.sigma_noise * noise
    turbulent = Image(np.clip(turbulent, 0.0, 1.0))

    dt = int(round(1e6 / params.fps_latent))
    if dt < 1:
        raise ValidationError(f"fps_latent {params.fps_latent} exceeds microsecond resolution")
    timestamps = dt // 2 + dt * np.arange(n, dtype=np.int64)
    latents = FrameSequence(
        frames=tuple(latent_frames),
        timestamps=timestamps,
        exposure_start=0,
        exposure_end=n * dt,
    )
    return TurbulentRender(
        turbulent=turbulent,
        latents=latents,
        tilt_ref=tilts[n // 2],
        sigma_noise_used=params.sigma_noise,
    )
