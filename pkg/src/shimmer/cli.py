"""Command-line interface.

Subcommands: gen-dataset, simulate, events, deblur, variance, detilt,
restore, eval.  Every subcommand accepts --config <json>, --seed <u64> and
--out <dir>; --threads is global.  Exit codes: 0 ok, 2 validation error,
3 numeric error, 4 acceptance-floor failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ._version import __version__
from .dataset import GenConfig, gen_dataset, load_manifest, run_eval, variance_preview
from .errors import ArgumentError, ShimmerError, ValidationError
from .events import ThresholdModel, read_events, write_events
from .evsim import simulate_events
from .formation import variance_map
from .images import (
    FrameSequence,
    Image,
    load_flow_pfm,
    read_image,
    save_flow_pfm,
    write_image,
)
from .restore import (
    RestoreConfig,
    deblur,
    estimate_tilt_flow,
    reference_frame,
    restore_pipeline,
    warp_refine,
)
from .rng import Rng
from .turbsim import TurbulenceParams, render_turbulent


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"config {p} must hold a JSON object")
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_dataset(args) -> int:
    doc = _load_config(args.config)
    cfg = GenConfig.from_json(doc)
    manifest = gen_dataset(cfg.clean_dir, args.out, cfg, args.seed, threads=args.threads)
    print(f"wrote {len(manifest.entries)} entries to {args.out} "
          f"({len(manifest.split['train'])} train / {len(manifest.split['test'])} test)")
    return 0


def _cmd_simulate(args) -> int:
    doc = _load_config(args.config)
    params = TurbulenceParams(**doc.get("turbulence", {}))
    clean = read_image(args.input)
    render = render_turbulent(clean, params, Rng(args.seed))
    out = _out_dir(args)
    write_image(render.turbulent, out / "turbulent.pfm")
    save_flow_pfm(render.tilt_ref.u, render.tilt_ref.v, out / "tilt_ref.pfm")
    latents = render.latents
    latent_dir = out / "latents"
    latent_dir.mkdir(exist_ok=True)
    for k, frame in enumerate(latents.frames):
        write_image(frame, latent_dir / f"{k:04d}.pfm")
    meta = {
        "timestamps": [int(t) for t in latents.timestamps],
        "exposure_start": int(latents.exposure_start),
        "exposure_end": int(latents.exposure_end),
        "sigma_noise_used": render.sigma_noise_used,
        "version": __version__,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"simulated {len(latents)} latents -> {out}")
    return 0


def _cmd_events(args) -> int:
    doc = _load_config(args.config)
    ev = dict(doc.get("event_sim", {}))
    noise_rate = float(ev.pop("noise_rate_hz", 0.0))
    refractory = int(ev.pop("refractory_us", 0))
    ev.setdefault("seed", args.seed)
    model = ThresholdModel(**ev)
    src = Path(args.input)
    meta = json.loads((src / "meta.json").read_text())
    latent_dir = src / "latents"
    frames = [read_image(p) for p in sorted(latent_dir.glob("*.pfm"))]
    latents = FrameSequence(
        frames=tuple(frames),
        timestamps=np.asarray(meta["timestamps"], dtype=np.int64),
        exposure_start=meta["exposure_start"],
        exposure_end=meta["exposure_end"],
    )
    sim = simulate_events(latents, model, noise_rate_hz=noise_rate, refractory_us=refractory)
    out = _out_dir(args)
    write_events(sim.stream, out / "events.evtb")
    write_image(sim.threshold_map, out / "threshold_map.pfm")
    print(f"emitted {len(sim.stream)} events -> {out / 'events.evtb'}")
    return 0


def _restore_cfg(args, extra: dict | None = None) -> RestoreConfig:
    doc = dict(_load_config(args.config).get("restore", {}))
    if extra:
        for k, v in extra.items():
            doc.setdefault(k, v)
    return RestoreConfig.from_json(doc)


def _cmd_deblur(args) -> int:
    cfg = _restore_cfg(args)
    turbulent = read_image(args.turbulent)
    events = read_events(args.events)
    out = _out_dir(args)
    write_image(deblur(turbulent, events, cfg), out / "coarse.pfm")
    print(f"deblurred -> {out / 'coarse.pfm'}")
    return 0


def _cmd_variance(args) -> int:
    doc = _load_config(args.config)
    fcfg = doc.get("formation", {})
    c = float(fcfg.get("c", 0.2))
    mode = fcfg.get("accum_mode", "literal_sum")
    events = read_events(args.events)
    out = _out_dir(args)
    write_image(variance_preview(events, c, mode), out / "variance.pfm")
    print(f"variance map -> {out / 'variance.pfm'}")
    return 0


def _cmd_detilt(args) -> int:
    cfg = _restore_cfg(args)
    coarse = read_image(args.coarse)
    reference = read_image(args.reference)
    if args.variance:
        vmap = read_image(args.variance).data
    else:
        vmap = np.zeros((coarse.height, coarse.width))
    flow = estimate_tilt_flow(coarse, reference, vmap, cfg.solver)
    refined = warp_refine(coarse, flow)
    out = _out_dir(args)
    save_flow_pfm(flow.u, flow.v, out / "flow.pfm")
    write_image(refined, out / "refined.pfm")
    print(f"detilted -> {out / 'refined.pfm'}")
    return 0


def _cmd_restore(args) -> int:
    cfg = _restore_cfg(args)
    turbulent = read_image(args.turbulent)
    events = read_events(args.events)
    report = restore_pipeline(turbulent, events, cfg)
    out = _out_dir(args)
    write_image(report.coarse, out / "coarse.pfm")
    write_image(report.refined, out / "refined.pfm")
    save_flow_pfm(report.flow.u, report.flow.v, out / "flow.pfm")
    ref = reference_frame(turbulent, events, cfg)
    write_image(ref, out / "reference.pfm")
    (out / "report.json").write_text(
        json.dumps(
            {
                "residuals": [list(level) for level in report.residuals],
                "config": asdict(cfg),
                "version": __version__,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    (out / "run_info.json").write_text(
        json.dumps({"timings_ms": report.timings_ms}, indent=2, sort_keys=True) + "\n"
    )
    print(f"restored -> {out / 'refined.pfm'}")
    return 0


def _cmd_eval(args) -> int:
    doc = _load_config(args.config)
    manifest = load_manifest(args.manifest)
    report = run_eval(
        manifest,
        Path(args.manifest).parent,
        doc,
        out_dir=args.out,
        threads=args.threads,
    )
    agg = report.aggregates
    print(
        "eval: psnr_turb={} psnr_restored={}".format(
            agg["psnr_turb"]["mean"], agg["psnr_restored"]["mean"]
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shimmer",
        description="event-guided turbulence simulation and restoration",
    )
    parser.add_argument("--threads", type=int, default=1, help="worker threads for dataset ops")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=0, help="64-bit seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-dataset", help="render a synthetic dataset + manifest")
    common(p)
    p.set_defaults(fn=_cmd_gen_dataset)

    p = sub.add_parser("simulate", help="turbulent exposure + latents from a clean image")
    common(p)
    p.add_argument("--input", required=True, help="clean image (.pfm/.pgm)")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("events", help="emit events from a simulate output directory")
    common(p)
    p.add_argument("--input", required=True, help="directory produced by `simulate`")
    p.set_defaults(fn=_cmd_events)

    p = sub.add_parser("deblur", help="event-guided deblur of a turbulent image")
    common(p)
    p.add_argument("--turbulent", required=True)
    p.add_argument("--events", required=True)
    p.set_defaults(fn=_cmd_deblur)

    p = sub.add_parser("variance", help="accumulator variance map from events")
    common(p)
    p.add_argument("--events", required=True)
    p.set_defaults(fn=_cmd_variance)

    p = sub.add_parser("detilt", help="flow + warp between coarse and reference images")
    common(p)
    p.add_argument("--coarse", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--variance", default=None)
    p.set_defaults(fn=_cmd_detilt)

    p = sub.add_parser("restore", help="full two-step restoration")
    common(p)
    p.add_argument("--turbulent", required=True)
    p.add_argument("--events", required=True)
    p.set_defaults(fn=_cmd_restore)

    p = sub.add_parser("eval", help="score the test split of a dataset")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ShimmerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ArgumentError.exit_code


if __name__ == "__main__":
    sys.exit(main())
