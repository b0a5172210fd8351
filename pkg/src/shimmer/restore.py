"""Two-step classical restoration: event-guided deblur, then tilt removal.

The deblur step divides the long exposure by the per-pixel blur factor E
(ridge-regularized).  Tilt removal estimates a dense displacement field
between the sharp-but-tilted coarse result and a geometrically centered
reference frame, weighting the data term down where the event variance map
flags strong turbulence activity, then warps the coarse image.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import warp_bilinear
from .errors import ArgumentError, NumericError, ValidationError
from .events import EventStream
from .formation import (
    DEFAULT_LAMBDA,
    edi_reconstruct,
    event_integral,
    variance_map,
)
from .images import Image
from .turbsim import TiltFlow, apply_tilt

DEBLUR_CLAMP = 1.5  # headroom for highlights above the nominal [0, 1] range


@dataclass(frozen=True)
class FlowSolverParams:
    """Coarse-to-fine Gauss-Newton solver knobs.

    The flow is solved coarse-to-fine on a factor-2 pyramid: with the default
    three levels the field is first computed at quarter resolution, upsampled
    x2 between levels, and refined up to full resolution.

    levels            pyramid depth (finest level is the input resolution)
    iters_per_level   warping (relinearization) iterations per level
    alpha             first-order flow smoothness weight
    kappa             variance coupling: data weight w = 1/(1 + kappa*V)
    min_level_size    stop coarsening below this many pixels per side
    """

    levels: int = 3
    iters_per_level: int = 10
    alpha: float = 0.1
    kappa: float = 4.0
    min_level_size: int = 8

    def __post_init__(self):
        if self.levels < 1:
            raise ValidationError(f"levels must be >= 1, got {self.levels}")
        if self.iters_per_level < 1:
            raise ValidationError(f"iters_per_level must be >= 1, got {self.iters_per_level}")
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")
        if self.kappa < 0:
            raise ValidationError(f"kappa must be >= 0, got {self.kappa}")
        if self.min_level_size < 4:
            raise ValidationError(f"min_level_size must be >= 4, got {self.min_level_size}")


@dataclass(frozen=True)
class RestoreConfig:
    """Shared configuration for the restoration stages."""

    c: float = 0.2
    lam: float = DEFAULT_LAMBDA
    exposure_start: int | None = None
    exposure_end: int | None = None
    t_ref: int | str = "mid"
    m_latents: int = 16
    accum_mode: str = "literal_sum"
    solver: FlowSolverParams = field(default_factory=FlowSolverParams)

    @classmethod
    def from_json(cls, doc: dict) -> "RestoreConfig":
        doc = dict(doc)
        solver_keys = {"levels", "iters_per_level", "alpha", "kappa", "min_level_size"}
        solver = FlowSolverParams(**{k: doc.pop(k) for k in list(doc) if k in solver_keys})
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = {"c", "lam", "exposure_start", "exposure_end", "t_ref", "m_latents", "accum_mode"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown restore config keys: {sorted(unknown)}")
        return cls(solver=solver, **doc)

    def window(self, stream: EventStream):
        start = self.exposure_start
        end = self.exposure_end
        if start is None:
            start = int(stream.t[0]) if len(stream) else 0
        if end is None:
            end = int(stream.t[-1]) + 1 if len(stream) else start + 1
        return start, end

    def ref_time(self, stream: EventStream) -> int:
        if self.t_ref == "mid":
            start, end = self.window(stream)
            return (start + end) // 2
        return int(self.t_ref)


@dataclass(frozen=True, eq=False)
class RestorationReport:
    """Stage outputs plus per-level solver residuals and stage timings."""

    coarse: Image
    flow: TiltFlow
    refined: Image
    residuals: tuple
    timings_ms: dict


def deblur(turbulent: Image, events: EventStream, cfg: RestoreConfig) -> Image:
    """Ridge deblur by the event blur factor, clamped to [0, 1.5]."""
    start, end = cfg.window(events)
    out = edi_reconstruct(
        turbulent, events, cfg.c, cfg.ref_time(events), cfg.lam, start, end
    )
    return Image(np.clip(out.data, 0.0, DEBLUR_CLAMP))


def reference_frame(turbulent: Image, events: EventStream, cfg: RestoreConfig) -> Image:
    """Temporal mean of m reconstructed latents at uniform midpoint times.

    Individually tilted latents average to a blurred but geometrically
    centered frame (zero-mean tilt cancels to first order).
    """
    if cfg.m_latents < 1:
        raise ArgumentError(f"m_latents must be >= 1, got {cfg.m_latents}")
    start, end = cfg.window(events)
    t_ref = cfg.ref_time(events)
    base = edi_reconstruct(turbulent, events, cfg.c, t_ref, cfg.lam, start, end)
    total = float(end - start)
    ratio = np.zeros((turbulent.height, turbulent.width))
    for j in range(cfg.m_latents):
        tj = start + (j + 0.5) * total / cfg.m_latents
        ratio += np.exp(event_integral(events, cfg.c, t_ref, tj))
    ratio /= cfg.m_latents
    if base.channels == 1:
        return Image(base.data * ratio)
    return Image(base.data * ratio[:, :, None])


def _lowpass(a: np.ndarray) -> np.ndarray:
    """Separable binomial [1 4 6 4 1]/16 low-pass with edge-replicated borders."""
    ap = np.pad(a, ((2, 2), (2, 2)), mode="edge")
    t = (ap[:, :-4] + 4.0 * ap[:, 1:-3] + 6.0 * ap[:, 2:-2] + 4.0 * ap[:, 3:-1] + ap[:, 4:]) / 16.0
    return (t[:-4] + 4.0 * t[1:-3] + 6.0 * t[2:-2] + 4.0 * t[3:-1] + t[4:]) / 16.0


def _downsample2(a: np.ndarray) -> np.ndarray:
    """Antialiased 2x decimation: binomial low-pass, then every second sample."""
    return _lowpass(a)[::2, ::2]


def _bilinear_resize(a: np.ndarray, shape) -> np.ndarray:
    """Resize by bilinear sampling with pixel-center alignment."""
    ht, wt = shape
    hs, ws = a.shape
    ys = np.clip((np.arange(ht) + 0.5) * hs / ht - 0.5, 0.0, hs - 1.0)
    xs = np.clip((np.arange(wt) + 0.5) * ws / wt - 0.5, 0.0, ws - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, hs - 1)
    x1 = np.minimum(x0 + 1, ws - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = (1.0 - fx) * a[np.ix_(y0, x0)] + fx * a[np.ix_(y0, x1)]
    bot = (1.0 - fx) * a[np.ix_(y1, x0)] + fx * a[np.ix_(y1, x1)]
    return (1.0 - fy) * top + fy * bot


def _neighbor_sum(a: np.ndarray) -> np.ndarray:
    """Sum of the 4 edge-replicated neighbors."""
    up = np.vstack([a[:1], a[:-1]])
    down = np.vstack([a[1:], a[-1:]])
    left = np.hstack([a[:, :1], a[:, :-1]])
    right = np.hstack([a[:, 1:], a[:, -1:]])
    return up + down + left + right


def _gradients(a: np.ndarray):
    gy, gx = np.gradient(a)
    return gx, gy


def _data_residual(coarse, ref, u, v, w):
    r = warp_bilinear(coarse, u, v) - ref
    return r, float(np.sum(w * r * r))


_SOR_OMEGA = 1.9  # red-black over-relaxation factor
_SWEEPS = 30  # relaxation sweeps per linearization


def _solve_level(coarse, ref, w, u, v, params, level, residual_log):
    """Warping iterations at one pyramid level (in place on u, v).

    Each outer iteration linearizes the warp residual once, then runs
    red-black SOR sweeps on the linearized data + smoothness system before
    re-evaluating the data term.  Appends to residual_log the per-iteration
    weighted data residuals for the level, starting with the incoming value;
    the sequence is non-increasing by the step-halving rule (a step that
    still increases the residual after the last halving is reverted and ends
    the level).
    """
    gxr, gyr = _gradients(ref)
    # dimensionless prior: alpha couples relative to the mean squared image
    # gradient, making the objective invariant to intensity scaling (the
    # weight w stays out of the constant so kappa keeps its meaning)
    alpha = params.alpha * max(float(np.mean(gxr**2 + gyr**2)), 1e-12)
    yy, xx = np.indices(u.shape)
    colors = ((yy + xx) % 2 == 0, (yy + xx) % 2 == 1)
    r, res = _data_residual(coarse, ref, u, v, w)
    level_history = [res]
    for it in range(params.iters_per_level):
        # symmetric gradient: average of warped-source and target gradients
        gxw, gyw = _gradients(r + ref)
        gx = 0.5 * (gxw + gxr)
        gy = 0.5 * (gyw + gyr)
        wgx = w * gx
        wgy = w * gy
        a11 = wgx * gx + 4.0 * alpha
        a22 = wgy * gy + 4.0 * alpha
        # constant part of the linearized residual: r - gx*u0 - gy*v0
        r0 = r - gx * u - gy * v
        un = u.copy()
        vn = v.copy()
        for _ in range(_SWEEPS):
            for m in colors:
                cand = (alpha * _neighbor_sum(un) - wgx * (r0 + gy * vn)) / a11
                un[m] += _SOR_OMEGA * (cand[m] - un[m])
                cand = (alpha * _neighbor_sum(vn) - wgy * (r0 + gx * un)) / a22
                vn[m] += _SOR_OMEGA * (cand[m] - vn[m])
        du = un - u
        dv = vn - v
        if not (np.isfinite(du).all() and np.isfinite(dv).all()):
            raise NumericError(
                f"non-finite flow update at level {level}, iteration {it}"
            )
        step = 1.0
        accepted = False
        for _ in range(6):  # initial step plus up to 5 halvings
            r_new, res_new = _data_residual(coarse, ref, u + step * du, v + step * dv, w)
            if res_new <= res:
                u += step * du
                v += step * dv
                r, res = r_new, res_new
                accepted = True
                break
            step *= 0.5
        level_history.append(res)
        if not accepted:
            break  # no descent step found; keep the current flow
    residual_log.append(tuple(level_history))
    return u, v


def estimate_tilt_flow(
    coarse, reference, vmap, params: FlowSolverParams, residual_log: list | None = None
) -> TiltFlow:
    """Coarse-to-fine variance-weighted flow from coarse to reference.

    Minimizes sum of w*(coarse(x+u, y+v) - reference)^2 with first-order
    smoothness alpha*(|grad u|^2 + |grad v|^2), w = 1/(1 + kappa*V), by
    Gauss-Newton warping iterations on a factor-2 pyramid (default depth 3:
    the flow starts at quarter resolution and is upsampled x2 between levels,
    finishing at the full input resolution).
    """
    cg = coarse.data if isinstance(coarse, Image) else np.asarray(coarse, dtype=np.float64)
    rg = reference.data if isinstance(reference, Image) else np.asarray(reference, dtype=np.float64)
    if cg.ndim == 3:
        cg = cg.mean(axis=2)
    if rg.ndim == 3:
        rg = rg.mean(axis=2)
    vm = vmap.v if hasattr(vmap, "v") else np.asarray(vmap, dtype=np.float64)
    if cg.shape != rg.shape or cg.shape != vm.shape:
        raise ArgumentError(
            f"shape mismatch: coarse {cg.shape}, reference {rg.shape}, variance {vm.shape}"
        )
    # photometric normalization: joint scaling of both inputs cancels out
    norm = max(0.5 * (float(cg.mean()) + float(rg.mean())), 1e-6)
    cg = cg / norm
    rg = rg / norm

    full_shape = cg.shape
    # presmooth the solve images (two binomial passes): widens edges so the
    # bilinear-interpolated gradients stay valid across sub-pixel steps and
    # averages down per-pixel reconstruction noise
    cg, rg = _lowpass(_lowpass(cg)), _lowpass(_lowpass(rg))
    pyr = [(cg, rg, vm)]
    for _ in range(params.levels - 1):
        if min(pyr[-1][0].shape) // 2 < params.min_level_size:
            break
        c_l, r_l, v_l = pyr[-1]
        pyr.append((_downsample2(c_l), _downsample2(r_l), _downsample2(v_l)))

    residuals = residual_log if residual_log is not None else []
    u = np.zeros_like(pyr[-1][0])
    v = np.zeros_like(pyr[-1][0])
    for li in range(len(pyr) - 1, -1, -1):
        c_l, r_l, v_l = pyr[li]
        if u.shape != c_l.shape:
            u = _bilinear_resize(u, c_l.shape) * (c_l.shape[1] / u.shape[1])
            v = _bilinear_resize(v, c_l.shape) * (c_l.shape[0] / v.shape[0])
        w = 1.0 / (1.0 + params.kappa * v_l)
        u, v = _solve_level(c_l, r_l, w, u, v, params, li, residuals)

    if u.shape != full_shape:
        u = _bilinear_resize(u, full_shape) * (full_shape[1] / u.shape[1])
        v = _bilinear_resize(v, full_shape) * (full_shape[0] / v.shape[0])
    return TiltFlow(u, v)


def warp_refine(coarse: Image, flow: TiltFlow) -> Image:
    """Final warp of the coarse image by the estimated tilt flow."""
    return apply_tilt(coarse, flow)


def restore_pipeline(turbulent: Image, events: EventStream, cfg: RestoreConfig) -> RestorationReport:
    """deblur -> variance map -> reference frame -> flow -> warp."""
    timings = {}
    residuals_holder = []

    def _stage(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:
            raise type(exc)(f"stage {name}: {exc}") from exc
        timings[name] = (time.perf_counter() - t0) * 1e3
        return out

    coarse = _stage("deblur", lambda: deblur(turbulent, events, cfg))
    vmap = _stage("variance", lambda: variance_map(events, cfg.c, cfg.accum_mode))
    ref = _stage("reference", lambda: reference_frame(turbulent, events, cfg))
    flow = _stage(
        "flow",
        lambda: estimate_tilt_flow(coarse, ref, vmap, cfg.solver, residuals_holder),
    )
    refined = _stage("warp", lambda: warp_refine(coarse, flow))
    return RestorationReport(
        coarse=coarse,
        flow=flow,
        refined=refined,
        residuals=tuple(residuals_holder),
        timings_ms=timings,
    )
