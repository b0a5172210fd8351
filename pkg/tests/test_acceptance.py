"""Acceptance gate: one test per release criterion, each printing a single
PASS/FAIL line with the measured values (run with -s to see them on success;
the same line is the assertion message on failure)."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

import shimmer as sh
from shimmer.cli import main
from shimmer.dataset import GenConfig, gen_dataset, run_eval
from shimmer.events import ThresholdModel
from shimmer.evsim import simulate_events
from shimmer.formation import (
    accumulate,
    blur_map,
    edi_reconstruct,
    event_integral,
    latent_at,
    raw_variance,
    variance_map,
)
from shimmer.rng import Rng
from shimmer.turbsim import TurbulenceParams, render_turbulent

from conftest import SUITE_RESTORE
from helpers import blob_card, random_stream, single_pixel_stream

pytestmark = pytest.mark.acceptance


def _check(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    assert ok, line


def test_acceptance_edi_round_trip():
    """Latent reconstruction at every latent timestamp reaches 40 dB within
    the per-image time budget (constant threshold, no jitter, no noise)."""
    clean = blob_card(128, 6, 2, 0.35, Rng(11).substream(50))
    params = TurbulenceParams(
        sigma_tilt=1.0, rho=16.0, tau_corr=0.9, sigma_blur0=0.0,
        sigma_noise=0.0, n_latents=12, fps_latent=120.0, zero_mean_tilt=True,
    )
    r = render_turbulent(clean, params, Rng(11).substream(0))
    model = ThresholdModel(c_mean=0.2, c_std=0.0, c_min=0.05, c_max=0.5,
                           temporal_jitter_std=0.0, seed=7)
    stream = simulate_events(r.latents, model).stream
    es, ee = int(r.latents.exposure_start), int(r.latents.exposure_end)
    t_ref = int(r.latents.timestamps[len(r.latents.timestamps) // 2])

    start = time.perf_counter()
    scores = []
    for frame, t in zip(r.latents.frames, r.latents.timestamps):
        rec = latent_at(r.turbulent, stream, 0.2, t_ref, int(t), lam=0.0,
                        exposure_start=es, exposure_end=ee)
        scores.append(sh.psnr(rec, frame))
    elapsed = time.perf_counter() - start

    worst = min(scores)
    _check("edi-round-trip",
           worst >= 40.0 and elapsed <= 5.0,
           f"min PSNR {worst:.2f} dB over {len(scores)} latents "
           f"(floor 40.00) in {elapsed:.3f} s (budget 5 s)")


def test_acceptance_reblur_identity():
    """Plain-division deblur re-blurred by its own blur factor reproduces
    the turbulent input to 1e-9."""
    from shimmer.dataset import make_clean_card, _center_crop

    card = _center_crop(make_clean_card(592, 592, Rng(23).substream(0)), 64)
    r = render_turbulent(
        card, TurbulenceParams(sigma_tilt=1.0, rho=16.0, zero_mean_tilt=True),
        Rng(24),
    )
    model = ThresholdModel(c_mean=0.05, c_std=0.0, temporal_jitter_std=0.0,
                           seed=25)
    stream = simulate_events(r.latents, model).stream
    t_ref = int(r.latents.timestamps[len(r.latents.timestamps) // 2])
    es, ee = 0, int(r.latents.exposure_end)
    x = edi_reconstruct(r.turbulent, stream, 0.05, t_ref, lam=0.0,
                        exposure_start=es, exposure_end=ee)
    e = blur_map(stream, 0.05, es, ee, t_ref).e
    err = np.abs(x.data * e - r.turbulent.data).max()
    _check("reblur-identity", err <= 1e-9,
           f"max abs error {err:.3e} (limit 1e-9)")


def test_acceptance_variance_contracts():
    """Empty stream maps to zero, outputs stay in [0, 1], and the two-event
    literal-sum example matches the hand-computed raw variance."""
    empty = sh.EventStream(4, 4, *([np.empty(0, np.int64)] * 4))
    empty_ok = not variance_map(empty, 0.2).v.any()

    busy = variance_map(random_stream(seed=30, n=2000, width=16, height=16), 0.2).v
    range_ok = busy.min() >= 0.0 and busy.max() <= 1.0

    pair = single_pixel_stream(2, 2, x=1, y=1, events=[(100, 1), (200, -1)])
    raw = raw_variance(accumulate(pair, 0.2))[1, 1]
    value_ok = abs(raw - 0.1675797) <= 1e-6

    _check("variance-contracts",
           empty_ok and range_ok and value_ok,
           f"empty-zero {empty_ok}, range [{busy.min():.3f}, {busy.max():.3f}], "
           f"two-event raw {raw:.7f} (expect 0.1675797 +/- 1e-6)")


def test_acceptance_tilt_recovery(suite20):
    """20-image suite: mean flow endpoint error <= 0.5 px and restored PSNR
    beats turbulent by >= 2 dB, inside the 2-minute budget."""
    manifest, root = suite20
    start = time.perf_counter()
    report = run_eval(manifest, root, {"restore": dict(SUITE_RESTORE),
                                       "floor_db": -100.0}, threads=8)
    elapsed = time.perf_counter() - start

    rows = report.rows
    epe = float(np.mean([r["epe"] for r in rows]))
    gain = float(np.mean([r["psnr_restored"] - r["psnr_turb"] for r in rows]))
    _check("tilt-recovery",
           len(rows) == 20 and epe <= 0.5 and gain >= 2.0 and elapsed <= 120.0,
           f"{len(rows)} images, mean EPE {epe:.4f} px (limit 0.5), "
           f"mean gain {gain:+.3f} dB (floor +2), {elapsed:.1f} s (budget 120)")


@pytest.fixture(scope="module")
def noisy20(tmp_path_factory):
    """High-noise variant of the tilt suite for the guidance ablation."""
    cfg = GenConfig(
        turbulence=TurbulenceParams(sigma_tilt=1.5, rho=16.0,
                                    zero_mean_tilt=True),
        event_sim=ThresholdModel(),
        noise_rate_hz=100.0,
        crop=128,
        split_ratio=0.0,
        synthetic_count=20,
        synthetic_size=592,
    )
    root = tmp_path_factory.mktemp("noisy20")
    manifest = gen_dataset(None, root, cfg, seed=2027, threads=8)
    return manifest, root


def test_acceptance_variance_guidance_ablation(noisy20):
    """On the high-noise suite, variance-weighted flow (kappa=4) must match
    or beat unweighted flow (kappa=0) on EPE for >= 80% of images."""
    manifest, root = noisy20
    epes = {}
    for kappa in (4.0, 0.0):
        cfg = {"restore": dict(SUITE_RESTORE, kappa=kappa),
               "floor_db": -100.0}
        report = run_eval(manifest, root, cfg, threads=8)
        epes[kappa] = {r["id"]: r["epe"] for r in report.rows}
    ids = sorted(epes[4.0])
    wins = sum(epes[4.0][i] <= epes[0.0][i] for i in ids)
    mean4 = float(np.mean([epes[4.0][i] for i in ids]))
    mean0 = float(np.mean([epes[0.0][i] for i in ids]))
    _check("variance-guidance-ablation",
           wins >= 16,
           f"kappa=4 beats kappa=0 on {wins}/{len(ids)} images "
           f"(need 16); mean EPE {mean4:.4f} vs {mean0:.4f}")


def _tree_bytes(root: Path, skip=()) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_acceptance_determinism(tmp_path):
    """gen-dataset and restore artifacts are bit-identical across repeated
    runs and across --threads 1 vs --threads 8."""
    cfg_path = tmp_path / "gen.json"
    cfg_path.write_text(json.dumps({
        "turbulence": {"sigma_tilt": 1.0, "rho": 16.0, "sigma_blur0": 0.0,
                       "zero_mean_tilt": True},
        "event_sim": {"c_mean": 0.05, "c_std": 0.0, "temporal_jitter_std": 0.0},
        "crop": 64, "split_ratio": 0.5, "synthetic_count": 4,
        "synthetic_size": 64,
    }))
    trees = {}
    for tag, threads in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / f"ds_{tag}"
        rc = main(["--threads", str(threads), "gen-dataset",
                   "--config", str(cfg_path), "--seed", "9",
                   "--out", str(out)])
        assert rc == 0
        trees[tag] = _tree_bytes(out)
    gen_ok = trees["a"] == trees["b"] == trees["c"]

    manifest = json.loads((tmp_path / "ds_a" / "manifest.json").read_text())
    entry = manifest["entries"][0]
    turb = tmp_path / "ds_a" / entry["turbulent_path"]
    events = tmp_path / "ds_a" / entry["events_path"]
    rcfg = tmp_path / "restore.json"
    rcfg.write_text(json.dumps({"restore": {"c": 0.05, "alpha": 0.3}}))
    rtrees = {}
    for tag, threads in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / f"rest_{tag}"
        rc = main(["--threads", str(threads), "restore",
                   "--turbulent", str(turb), "--events", str(events),
                   "--config", str(rcfg), "--out", str(out)])
        assert rc == 0
        # run_info.json holds wall-clock timings and is the one artifact
        # allowed to differ
        rtrees[tag] = _tree_bytes(out, skip=("run_info.json",))
    rest_ok = rtrees["a"] == rtrees["b"] == rtrees["c"]

    _check("determinism", gen_ok and rest_ok,
           f"gen-dataset identical across runs/threads: {gen_ok}; "
           f"restore identical across runs/threads: {rest_ok}")


def test_acceptance_event_throughput():
    """event_integral sustains >= 1M events/s on a 2M-event stream."""
    stream = random_stream(seed=800, n=2_000_000, width=128, height=128)
    t_mid = int(stream.t[len(stream) // 2])
    event_integral(stream, 0.2, 0, t_mid)  # warm-up (jit compile, caches)
    start = time.perf_counter()
    event_integral(stream, 0.2, 0, t_mid)
    elapsed = time.perf_counter() - start
    rate = len(stream) / elapsed
    _check("event-throughput", rate >= 1e6,
           f"{rate / 1e6:.1f}M events/s (floor 1M)")
