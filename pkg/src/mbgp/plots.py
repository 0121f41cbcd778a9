"""Figures for the analysis report: delay bands per link and delay histograms."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

BAND_STYLE = {"p25": dict(ls="--", lw=0.8), "p50": dict(ls="-", lw=1.4),
              "p75": dict(ls="--", lw=0.8)}


def _axis_style(ax):
    ax.grid(True, alpha=0.3, lw=0.5)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)


def plot_bands(links, path, title=None):
    """One panel per link: 25th/75th percentile dashed, median solid, events marked."""
    fig, axes = plt.subplots(len(links), 1, figsize=(8, 2.6 * len(links)),
                             sharex=True, squeeze=False)
    for ax, la in zip(axes[:, 0], links):
        bands = [b for b in la.bands if b.sample_count]
        t = [b.time_point for b in bands]
        color = f"C{la.number - 1}"
        for name, style in BAND_STYLE.items():
            ax.plot(t, [getattr(b, name) for b in bands], color=color, label=name, **style)
        for ev in la.events:
            ax.axvline(ev.time_point, color="k", alpha=0.4, lw=0.8, ls=":")
            ax.annotate(ev.kind.value.lower().replace("_", " "), (ev.time_point, 1),
                        xycoords=("data", "axes fraction"), fontsize=7,
                        ha="left", va="top")
        link = la.series.link
        bw = f", {link.bandwidth_bps / 1e9:g}G" if link.bandwidth_bps else ""
        ax.set_title(f"Link {la.number}: {link.label}{bw}", fontsize=9)
        ax.set_ylabel("delay (ms)")
        _axis_style(ax)
    axes[0, 0].legend(fontsize=7, frameon=False, ncol=3)
    axes[-1, 0].set_xlabel("time point")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_histograms(links, time_points, bin_width, path):
    """Delay frequency distributions of every link at the given time points."""
    fig, axes = plt.subplots(1, len(time_points), figsize=(4 * len(time_points), 3),
                             squeeze=False, sharey=True)
    for ax, t in zip(axes[0], time_points):
        for la in links:
            bins = la.histograms.get(t, [])
            if bins:
                ax.bar([e + (la.number - 1) * bin_width / len(links) for e, _ in bins],
                       [c for _, c in bins], width=bin_width / len(links), align="edge",
                       color=f"C{la.number - 1}", label=f"Link {la.number}")
        ax.set_title(f"time point {t}", fontsize=9)
        ax.set_xlabel("delay (ms)")
        _axis_style(ax)
    axes[0, 0].set_ylabel("destinations")
    axes[0, 0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render(result, out_dir, bin_width: float) -> list:
    """Write the band figure and, if any link changed, histograms around the events."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [plot_bands(result.links, out_dir / "bands.png", result.case.key)]
    if result.control:
        written.append(plot_bands(result.control, out_dir / "control_bands.png",
                                  f"{result.case.key} (control)"))
    points = sorted({e.time_point for la in result.links for e in la.events})
    if points:
        calm = next((t for t in range(result.rounds) if all(abs(t - p) > 2 for p in points)
                     and any(t in la.histograms for la in result.links)), None)
        shown = points[:3] + ([calm] if calm is not None else [])
        written.append(plot_histograms(result.links, shown, bin_width,
                                       out_dir / "histograms.png"))
    return written
