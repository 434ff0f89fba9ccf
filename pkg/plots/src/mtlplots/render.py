"""Matplotlib rendering with a fixed style so outputs are reproducible.

Every figure is written with empty metadata and a pinned style dictionary;
rendering the same spec twice produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .figspec import FigureSpec, FigureSpecError
from .io import read_results, read_trajectory

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.fontsize": 8,
    "svg.hashsalt": "mtlplots",
}
EMP_COLOR = "#1f77b4"
TH_COLOR = "#d62728"


def _save(fig, spec: FigureSpec) -> Path:
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=spec.image_format, metadata={})
    plt.close(fig)
    return out


def render_overlay(spec: FigureSpec) -> Path:
    """Theory line over empirical mean +/- std band, for s(t) and test loss."""
    empirical, theory = [], []
    for path in spec.inputs:
        traj = read_trajectory(path)
        (theory if traj["source"] == "theory" else empirical).append(traj)
    if not empirical and not theory:
        raise FigureSpecError("overlay needs at least one trajectory input")
    if empirical:
        steps = empirical[0]["step"]
        for traj in empirical[1:]:
            if traj["step"] != steps:
                raise FigureSpecError("empirical trajectories disagree on recorded steps")
    else:
        steps = theory[0]["step"]

    with plt.rc_context(STYLE):
        fig, (ax_sv, ax_loss) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        if empirical:
            sv = np.array([t["top_sv"] for t in empirical])
            gl = np.array([t["gen_loss"] for t in empirical])
            for ax, series in ((ax_sv, sv), (ax_loss, gl)):
                mean = series.mean(axis=0)
                std = series.std(axis=0)
                ax.plot(steps, mean, color=EMP_COLOR,
                        label=f"empirical mean ({len(empirical)} seeds)")
                ax.fill_between(steps, mean - std, mean + std, color=EMP_COLOR, alpha=0.25,
                                linewidth=0)
        for traj in theory:
            ax_sv.plot(traj["step"], traj["top_sv"], color=TH_COLOR, ls="--", label="theory")
            ax_loss.plot(traj["step"], traj["gen_loss"], color=TH_COLOR, ls="--", label="theory")
        ax_sv.set_xlabel("step")
        ax_sv.set_ylabel("top singular value")
        ax_loss.set_xlabel("step")
        ax_loss.set_ylabel("test loss")
        ax_sv.legend(loc="lower right")
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        return _save(fig, spec)


def _group_mean_sem(rows, keys, value):
    """[(key_tuple, mean, sem)] over seeds for each coordinate combination."""
    groups = {}
    for row in rows:
        key = tuple(row[k] for k in keys)
        groups.setdefault(key, []).append(row[value])
    out = []
    for key in sorted(groups):
        vals = np.asarray(groups[key], dtype=float)
        sem = vals.std(ddof=1) / np.sqrt(vals.size) if vals.size > 1 else 0.0
        out.append((key, float(vals.mean()), float(sem)))
    return out


def render_grid(spec: FigureSpec) -> Path:
    """Small-multiples grid: rows x cols panels, one line per relatedness.

    grouping = (row_column, col_column, x_column, line_column); by default
    rows are dataset sizes, columns the main-task scale, the x axis the
    auxiliary scale, and lines the relatedness values. Shaded regions show
    the standard error of the seed mean.
    """
    if len(spec.grouping) != 4:
        raise FigureSpecError("grid figures need exactly 4 grouping columns")
    row_c, col_c, x_c, line_c = spec.grouping
    rows = []
    for path in spec.inputs:
        rows.extend(read_results(path, required_coords=spec.grouping))
    stats = _group_mean_sem(rows, (row_c, col_c, x_c, line_c), spec.value_column)

    row_vals = sorted({k[0] for k, _, _ in stats})
    col_vals = sorted({k[1] for k, _, _ in stats})
    line_vals = sorted({k[3] for k, _, _ in stats})
    cmap = plt.colormaps["viridis"]
    colors = {v: cmap(i / max(len(line_vals) - 1, 1)) for i, v in enumerate(line_vals)}

    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(
            len(row_vals), len(col_vals),
            figsize=(3.2 * len(col_vals) + 1.2, 2.6 * len(row_vals) + 0.8),
            squeeze=False, sharex=True,
        )
        for i, rv in enumerate(row_vals):
            for j, cv in enumerate(col_vals):
                ax = axes[i][j]
                for lv in line_vals:
                    pts = [(k[2], mean, sem) for k, mean, sem in stats
                           if k[0] == rv and k[1] == cv and k[3] == lv]
                    if not pts:
                        continue
                    xs, means, sems = map(np.array, zip(*sorted(pts)))
                    ax.plot(xs, means, color=colors[lv], label=f"{line_c}={lv:g}")
                    ax.fill_between(xs, means - sems, means + sems,
                                    color=colors[lv], alpha=0.25, linewidth=0)
                ax.axhline(0.0, color="k", lw=0.6, alpha=0.5)
                if len(set(k[2] for k, _, _ in stats)) > 1:
                    ax.set_xscale("log")
                if i == len(row_vals) - 1:
                    ax.set_xlabel(x_c)
                if j == 0:
                    ax.set_ylabel(f"{row_c}={rv:g}\n{spec.value_column}")
                if i == 0:
                    ax.set_title(f"{col_c}={cv:g}")
        axes[0][-1].legend(loc="best")
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        return _save(fig, spec)


def render_summary_panel(spec: FigureSpec) -> Path:
    """Seed-mean value vs one coordinate, one line per second coordinate."""
    if len(spec.grouping) < 2:
        raise FigureSpecError("summary-panel needs two grouping columns (x, line)")
    x_c, line_c = spec.grouping[0], spec.grouping[1]
    rows = []
    for path in spec.inputs:
        rows.extend(read_results(path, required_coords=(x_c, line_c)))
    stats = _group_mean_sem(rows, (x_c, line_c), spec.value_column)
    line_vals = sorted({k[1] for k, _, _ in stats})
    cmap = plt.colormaps["viridis"]
    colors = {v: cmap(i / max(len(line_vals) - 1, 1)) for i, v in enumerate(line_vals)}

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 3.2))
        for lv in line_vals:
            pts = [(k[0], mean, sem) for k, mean, sem in stats if k[1] == lv]
            xs, means, sems = map(np.array, zip(*sorted(pts)))
            ax.errorbar(xs, means, yerr=sems, color=colors[lv], capsize=2,
                        label=f"{line_c}={lv:g}")
        ax.axhline(0.0, color="k", lw=0.6, alpha=0.5)
        ax.set_xlabel(x_c)
        ax.set_ylabel(spec.value_column)
        ax.legend(loc="best")
        if spec.title:
            fig.suptitle(spec.title)
        fig.tight_layout()
        return _save(fig, spec)


def render(spec: FigureSpec) -> Path:
    handler = {
        "overlay": render_overlay,
        "grid": render_grid,
        "summary-panel": render_summary_panel,
    }[spec.kind]
    return handler(spec)
