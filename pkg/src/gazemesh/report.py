"""Matplotlib figure rendering for session reports.

Renders the human-facing companions to the delimited analysis outputs:
offset/drift traces, collective time series with rolling-mean smoothing,
blink raster density, and pairwise similarity matrices. These are report
figures; the byte-exact frame renders live in `viz`.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import analysis, timesync

log = logging.getLogger(__name__)

FIG_DPI = 110


def offsets_figure(offset_dir: Path, out_path: Path) -> Path:
    """Per-device offset and drift traces from the offset CSV logs."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    for path in sorted(Path(offset_dir).glob("*.csv")):
        samples = timesync.read_offset_csv(path)
        if not samples:
            continue
        t = np.array([s.t_ref_ns for s in samples]) / 1e9
        off = np.array([s.offset_ns for s in samples]) / 1e6
        drift = np.array([d for _, d in timesync.drift_series(samples)]) / 1e6
        ax0.plot(t, off, lw=0.7, alpha=0.7)
        ax1.plot(t, drift, lw=0.7, alpha=0.7)
    ax0.set_xlabel("time (s)")
    ax0.set_ylabel("offset (ms)")
    ax0.set_title("Clock offsets")
    ax1.set_xlabel("time (s)")
    ax1.set_ylabel("drift (ms)")
    ax1.set_title("Accumulated drift")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def collective_figure(analysis_dir: Path, out_path: Path, window: int = 150) -> Path:
    """Stacked collective measures (sd_x, sd_y, contour area, points in frame)."""
    names = ["sd_x", "sd_y", "contour_area", "points_in_frame"]
    fig, axes = plt.subplots(len(names), 1, figsize=(9, 8), sharex=True)
    for ax, name in zip(axes, names):
        path = Path(analysis_dir) / f"collective_{name}.csv"
        if not path.exists():
            ax.set_visible(False)
            continue
        t, v = analysis.read_series_csv(path)
        ax.plot(t / 1e9, v, lw=0.4, alpha=0.4, color="gray")
        ax.plot(t / 1e9, analysis.rolling_mean(v, window), lw=1.2, color="tab:blue")
        ax.set_ylabel(name)
    axes[-1].set_xlabel("time (s)")
    fig.suptitle("Collective gaze measures")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def blink_figure(analysis_dir: Path, out_path: Path) -> Path:
    path = Path(analysis_dir) / "blink_density.csv"
    if not path.exists():
        raise FileNotFoundError(path)
    t, v = analysis.read_series_csv(path)
    fig, ax = plt.subplots(figsize=(9, 2.4))
    ax.fill_between(t / 1e9, v, color="black", alpha=0.85)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("fraction blinking")
    ax.set_title("Aggregate blink activity")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def pairwise_figure(csv_path: Path, out_path: Path, title: str) -> Path:
    ids: list[str] = []
    rows: list[tuple[str, str, float]] = []
    with open(csv_path) as f:
        reader = csv.reader(f)
        next(reader)
        for a, b, v in reader:
            rows.append((a, b, float(v)))
            for x in (a, b):
                if x not in ids:
                    ids.append(x)
    n = len(ids)
    idx = {d: i for i, d in enumerate(ids)}
    m = np.full((n, n), np.nan)
    np.fill_diagonal(m, 1.0)
    for a, b, v in rows:
        m[idx[a], idx[b]] = m[idx[b], idx[a]] = v
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(m, cmap="viridis")
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(ids, rotation=90, fontsize=6)
    ax.set_yticklabels(ids, fontsize=6)
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def session_figures(fig_dir: Path, out_dir: Path, central_dims: tuple[int, int]) -> dict[str, Path]:
    """Render every figure the session outputs support; missing inputs are skipped."""
    fig_dir = Path(fig_dir)
    out_dir = Path(out_dir)
    produced: dict[str, Path] = {}
    offsets = out_dir / "offsets"
    if offsets.exists():
        produced["fig_offsets"] = offsets_figure(offsets, fig_dir / "offsets.png")
    adir = out_dir / "analysis"
    if (adir / "collective_sd_x.csv").exists():
        produced["fig_collective"] = collective_figure(adir, fig_dir / "collective.png")
    if (adir / "blink_density.csv").exists():
        produced["fig_blinks"] = blink_figure(adir, fig_dir / "blinks.png")
    for label in ("ego", "transformed"):
        p = adir / f"pairwise_sim_{label}.csv"
        if p.exists():
            produced[f"fig_sim_{label}"] = pairwise_figure(
                p, fig_dir / f"pairwise_sim_{label}.png", f"Pairwise SIM ({label})")
    return produced
