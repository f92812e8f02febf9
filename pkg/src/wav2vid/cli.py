"""Command line front end.

Subcommands: synth (scene preview), train (checkpoints), run (one conference
pass), sweep (quality vs SNR), account (bandwidth table), compare (synced vs
time-warped audio conditioning). Report commands write CSV tables and PNG
figures side by side under --out.

Exit codes: 0 success, 2 bad configuration, 3 training failure.
"""

import argparse
import os
import sys
from dataclasses import replace

from . import report
from .channel import snr_sweep_points
from .config import load_config
from .errors import ConfigError, TrainingError
from .media import synth_scene, write_clip
from .pipeline import (PipelineConfig, compare_audio_conditioning,
                       declared_accounting, run_pipeline, snr_sweep,
                       table2_accounting)
from .training import has_checkpoints, load_models, save_models, train_all


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) \
        else PipelineConfig()
    over = {}
    for name in ("seed", "epsilon", "scene_seed", "motion_profile"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "duration", None) is not None:
        over["duration_s"] = args.duration
    if getattr(args, "snr_db", None) is not None:
        over["channel"] = replace(cfg.channel, snr_db=args.snr_db)
    if over:
        # replace() reruns the dataclass validation, so bad overrides are
        # rejected the same way a bad config file is
        cfg = replace(cfg, **over)
    return cfg


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _models(cfg: PipelineConfig, args):
    """Loads the checkpoint set, training and saving one first if missing."""
    ckpt = args.checkpoints or os.path.join(args.out, "checkpoints")
    tcfg = cfg.training
    if has_checkpoints(ckpt) and not getattr(args, "force", False):
        print(f"loading checkpoints from {ckpt}")
        return load_models(ckpt, seed=tcfg.seed, eta_y=tcfg.eta_y,
                           eta_x=tcfg.eta_x), ckpt
    print(f"no checkpoints at {ckpt}; training (this takes a few minutes)")
    models = train_all(tcfg)
    save_models(models, ckpt)
    print(f"checkpoints saved to {ckpt}")
    return models, ckpt


def _parse_snr_grid(text: str) -> list:
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            pts = snr_sweep_points(float(lo), float(hi), int(n))
            return [p.snr_db for p in pts]
        vals = [float(s) for s in text.split(",") if s.strip()]
        if not vals:
            raise ValueError("empty grid")
        return vals
    except ValueError as e:
        raise ConfigError(f"bad SNR grid {text!r} ({e}); "
                          "use lo:hi:n or a comma list of dB values") from e


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    out = _out_dir(args)
    clip, scene = synth_scene(args.seed, args.duration, args.fps, args.rate,
                              args.profile)
    clip_path = os.path.join(out, "scene.clip")
    write_clip(clip, clip_path)
    report.scene_figure(clip, os.path.join(out, "scene.png"))
    f = clip.video.frames
    print(f"scene seed={args.seed} profile={args.profile}: "
          f"{f.shape[0]} frames {f.shape[1]}x{f.shape[2]}, "
          f"{clip.audio.samples.size} audio samples")
    print(f"wrote {clip_path} and {os.path.join(out, 'scene.png')}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    tcfg = cfg.training
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    ckpt = args.checkpoints or os.path.join(_out_dir(args), "checkpoints")
    if has_checkpoints(ckpt) and not args.force:
        print(f"checkpoints already present at {ckpt} (use --force to retrain)")
        return 0
    models = train_all(tcfg)
    save_models(models, ckpt)
    for s in models.stages:
        tail = "converged early" if s.converged else "ran full budget"
        print(f"  {s.name:16s} {s.epochs_run:4d} epochs  "
              f"loss {s.first_loss:.4g} -> {s.last_loss:.4g}  ({tail})")
    print(f"checkpoints saved to {ckpt}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    models, _ = _models(cfg, args)
    result = run_pipeline(cfg, models, noiseless=args.noiseless)

    report.run_csv(result, os.path.join(out, "run.csv"))
    report.metrics_csv(result.metrics, os.path.join(out, "metrics.csv"))
    report.run_figure(result, os.path.join(out, "run.png"))

    sent = sum(d.transmit_video for d in result.decisions)
    print(f"{cfg.n_clips} clips, video transmitted for {sent} "
          f"(epsilon={cfg.epsilon:g})")
    for k in sorted(result.metrics):
        print(f"  {k:8s} {result.metrics[k]:.6g}")
    print(f"wrote run.csv, metrics.csv, run.png under {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    snrs = _parse_snr_grid(args.snr)  # fail on a bad grid before training
    models, _ = _models(cfg, args)
    rep = snr_sweep(cfg, models, snrs, repeats=args.repeats)

    report.sweep_csv(rep, os.path.join(out, "sweep.csv"))
    report.sweep_figure(rep, os.path.join(out, "sweep.png"))
    for row in rep.rows:
        s = row.stats
        print(f"  {row.snr_db:5.1f} dB  psnr {s['psnr'][0]:6.2f}  "
              f"msssim {s['ms_ssim'][0]:.4f}  nrmse {s['nrmse'][0]:.4f}")
    print(f"wrote sweep.csv, sweep.png under {out} ({rep.repeats} repeats)")
    return 0


def cmd_account(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    if args.measured:
        models, _ = _models(cfg, args)
        result = run_pipeline(cfg, models)
        rep = table2_accounting(cfg, result.decisions, result.video_streams,
                                result.audio_streams)
    else:
        rep = declared_accounting(cfg.duration_s)

    report.accounting_csv(rep, os.path.join(out, "accounting.csv"))
    report.accounting_figure(rep, os.path.join(out, "accounting.png"))
    for r in rep.rows:
        print(f"  {r.method:12s} {r.total_units:14,.0f} {r.unit:8s} "
              f"reduction {100 * r.reduction_vs_traditional:6.2f}%")
    print(f"wrote accounting.csv, accounting.png under {out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    models, _ = _models(cfg, args)
    rep = compare_audio_conditioning(cfg, models, repeats=args.repeats,
                                     warp_factor=args.warp)

    report.compare_csv(rep, os.path.join(out, "compare.csv"))
    report.compare_figure(rep, os.path.join(out, "compare.png"))
    m = rep.means()
    print(f"  lip-sync r: synced {m['r_sync']:.4f} vs warped {m['r_warp']:.4f}")
    print(f"  proxy FID:  synced {m['fid_sync']:.4g} vs warped {m['fid_warp']:.4g}")
    print(f"wrote compare.csv, compare.png under {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
    p.add_argument("--out", default="out", help="output directory")


def _add_model_source(p):
    p.add_argument("--checkpoints", default=None,
                   help="checkpoint directory (default: <out>/checkpoints; "
                        "trained on demand when missing)")


def _add_scene_overrides(p):
    p.add_argument("--scene-seed", type=int, default=None, dest="scene_seed",
                   help="override the scene seed")
    p.add_argument("--duration", type=float, default=None,
                   help="override the scene duration in seconds")
    p.add_argument("--profile", default=None, dest="motion_profile",
                   choices=("gentle", "static", "turning"),
                   help="override the head motion profile")
    p.add_argument("--epsilon", type=float, default=None,
                   help="pose gate threshold (0 transmits every clip)")
    p.add_argument("--snr-db", type=float, default=None, dest="snr_db",
                   help="override the channel SNR in dB")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wav2vid",
        description="Desk-scale audio-driven video conferencing simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a scene and write a preview")
    p.add_argument("--seed", type=int, default=7, help="scene seed")
    p.add_argument("--duration", type=float, default=2.4)
    p.add_argument("--profile", default="gentle",
                   choices=("gentle", "static", "turning"))
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--rate", type=float, default=8000.0,
                   help="audio sample rate")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the three models and checkpoint")
    _add_common(p)
    _add_model_source(p)
    p.add_argument("--force", action="store_true",
                   help="retrain even if checkpoints exist")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one conference pass and report")
    _add_common(p)
    _add_model_source(p)
    _add_scene_overrides(p)
    p.add_argument("--noiseless", action="store_true",
                   help="bypass the channel (codec-only measurement)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="quality vs channel SNR")
    _add_common(p)
    _add_model_source(p)
    _add_scene_overrides(p)
    p.add_argument("--snr", default="0:20:5",
                   help="SNR grid, lo:hi:n or comma list of dB values")
    p.add_argument("--repeats", type=int, default=20,
                   help="independent channel realizations per point")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("account", help="per-content bandwidth accounting")
    _add_common(p)
    _add_model_source(p)
    _add_scene_overrides(p)
    p.add_argument("--measured", action="store_true",
                   help="replace the declared row with symbols counted from "
                        "an actual run")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("compare", help="synced vs time-warped audio drive")
    _add_common(p)
    _add_model_source(p)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warp", type=float, default=1.3,
                   help="time warp factor for the misaligned condition")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
