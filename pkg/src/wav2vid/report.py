"""CSV tables and matplotlib figures for the run reports.

Floats are printed with 6 significant digits so reruns of the same seeds
produce byte-identical files.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SWEEP_COLUMNS = ("snr_db", "nrmse_mean", "nrmse_std", "segsnr_mean",
                 "segsnr_std", "psnr_mean", "psnr_std", "msssim_mean",
                 "msssim_std", "fid_mean", "fid_std")
ACCOUNTING_COLUMNS = ("method", "video_units", "audio_units", "side_units",
                      "total_units", "unit", "reduction_vs_traditional")
COMPARE_COLUMNS = ("seed", "r_sync", "r_warp", "fid_sync", "fid_warp")
RUN_COLUMNS = ("clip", "transmit_video", "pose_score", "video_symbols",
               "audio_symbols")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sweep_csv(report, path) -> None:
    rows = []
    for r in report.rows:
        s = r.stats
        rows.append((r.snr_db,
                     s["nrmse"][0], s["nrmse"][1],
                     s["seg_snr"][0], s["seg_snr"][1],
                     s["psnr"][0], s["psnr"][1],
                     s["ms_ssim"][0], s["ms_ssim"][1],
                     s["fid"][0], s["fid"][1]))
    write_csv(path, SWEEP_COLUMNS, rows)


def accounting_csv(report, path) -> None:
    rows = [(r.method, r.video_units, r.audio_units, r.side_units,
             r.total_units, r.unit, r.reduction_vs_traditional)
            for r in report.rows]
    write_csv(path, ACCOUNTING_COLUMNS, rows)


def compare_csv(report, path) -> None:
    rows = [(r.seed, r.r_sync, r.r_warp, r.fid_sync, r.fid_warp)
            for r in report.rows]
    m = report.means()
    rows.append(("mean", m["r_sync"], m["r_warp"], m["fid_sync"], m["fid_warp"]))
    write_csv(path, COMPARE_COLUMNS, rows)


def run_csv(result, path) -> None:
    rows = []
    for i, (d, vs, asym) in enumerate(zip(result.decisions, result.video_streams,
                                          result.audio_streams)):
        rows.append((i, d.transmit_video, d.score,
                     0 if vs is None else vs.total_symbols, asym.symbols.size))
    write_csv(path, RUN_COLUMNS, rows)


def metrics_csv(metrics: dict, path) -> None:
    keys = sorted(metrics)
    write_csv(path, keys, [tuple(metrics[k] for k in keys)])


def sweep_figure(report, path) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5), sharex=True)
    panels = (("psnr", "PSNR (dB)"), ("ms_ssim", "MS-SSIM"),
              ("nrmse", "NRMSE"), ("fid", "proxy FID"))
    snrs = [r.snr_db for r in report.rows]
    for ax, (key, label) in zip(axes.ravel(), panels):
        mean = [r.stats[key][0] for r in report.rows]
        std = [r.stats[key][1] for r in report.rows]
        ax.errorbar(snrs, mean, yerr=std, marker="o", capsize=3)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("channel SNR (dB)")
    fig.suptitle(f"quality vs SNR ({report.repeats} repeats)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def accounting_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    methods = [r.method for r in report.rows]
    totals = [r.total_units for r in report.rows]
    bars = ax.barh(methods, totals, color="#4878a8")
    for bar, r in zip(bars, report.rows):
        ax.text(bar.get_width() * 1.01, bar.get_y() + bar.get_height() / 2,
                f"{r.total_units:,.0f} {r.unit}"
                + (f"  (-{100 * r.reduction_vs_traditional:.2f}%)"
                   if r.method != "traditional" else ""),
                va="center", fontsize=9)
    ax.set_xlabel("transmitted volume per content (mixed units as declared)")
    ax.set_xlim(0, max(totals) * 1.45)
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def scene_figure(clip, path) -> None:
    frames = clip.video.frames
    idx = [int(round(i)) for i in
           [0, (frames.shape[0] - 1) / 2, frames.shape[0] - 1]]
    fig, axes = plt.subplots(1, 4, figsize=(11, 3))
    for ax, t in zip(axes[:3], idx):
        ax.imshow(frames[t], cmap="gray", vmin=0, vmax=clip.video.peak)
        ax.set_title(f"frame {t}")
        ax.axis("off")
    t_axis = [i / clip.audio.sample_rate for i in range(clip.audio.samples.size)]
    axes[3].plot(t_axis, clip.audio.samples, lw=0.4)
    axes[3].set_title("audio")
    axes[3].set_xlabel("s")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def run_figure(result, path) -> None:
    src = result.source.video.frames
    out = [f for c in result.clips_out for f in c.video.frames]
    n = min(src.shape[0], len(out))
    idx = [int(round(i * (n - 1) / 3)) for i in range(4)]
    fig, axes = plt.subplots(2, 4, figsize=(10, 5.2))
    peak = result.source.video.peak
    for col, t in enumerate(idx):
        axes[0, col].imshow(src[t], cmap="gray", vmin=0, vmax=peak)
        axes[0, col].set_title(f"t={t}")
        axes[1, col].imshow(out[t], cmap="gray", vmin=0, vmax=peak)
        for row in (0, 1):
            axes[row, col].axis("off")
    axes[0, 0].set_ylabel("source")
    axes[1, 0].set_ylabel("received")
    m = result.metrics
    fig.suptitle(f"PSNR {m['psnr']:.2f} dB, MS-SSIM {m['ms_ssim']:.3f}, "
                 f"NRMSE {m['nrmse']:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def compare_figure(report, path) -> None:
    m = report.means()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 4))
    conds = ("decoded audio", f"warped x{report.warp_factor:g}")
    ax1.bar(conds, [m["r_sync"], m["r_warp"]], color=["#4878a8", "#a85448"])
    ax1.set_ylabel("lip-sync correlation r")
    ax1.axhline(0, color="black", lw=0.8)
    ax2.bar(conds, [m["fid_sync"], m["fid_warp"]], color=["#4878a8", "#a85448"])
    ax2.set_ylabel("proxy FID")
    for ax in (ax1, ax2):
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle(f"audio conditioning over {len(report.rows)} seeds")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
