"""Figure rendering for runs, schedules, and validation reports.

Everything here draws with the file-only matplotlib backend and writes PNG
files next to the delimited outputs; nothing requires a display. Each
function returns the path(s) it wrote so callers can report them.
"""

from __future__ import annotations

from collections.abc import Mapping
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .frame import StreamFrame  # noqa: E402
from .graph import (  # noqa: E402
    DagTopology,
    ScheduleBounds,
    critical_context_path,
    graph_context_window,
)
from .validate import ValidationReport  # noqa: E402

__all__ = [
    "schedule_gantt",
    "window_profile",
    "divergence_map",
    "output_series",
]


def schedule_gantt(bounds: ScheduleBounds, path: str | Path) -> Path:
    """Draw the greedy schedule as one lane per processor.

    Critical-path nodes are drawn darker; dashed vertical lines mark the
    makespan envelope [max(L*, W/P), L* + (W - L*)/P] that any greedy list
    schedule is guaranteed to land in.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    on_critical = set(bounds.critical_path)

    fig, ax = plt.subplots(figsize=(8, 1.2 + 0.6 * bounds.processors))
    for nid, proc, start, end in bounds.schedule:
        color = "tab:blue" if nid in on_critical else "tab:gray"
        ax.barh(proc, end - start, left=start, height=0.6, color=color,
                edgecolor="black", linewidth=0.5)
        ax.text((start + end) / 2, proc, nid, ha="center", va="center",
                fontsize=8, color="white")
    ax.axvline(bounds.lower, linestyle="--", color="tab:green", linewidth=1,
               label=f"lower {bounds.lower:g}")
    ax.axvline(bounds.upper, linestyle="--", color="tab:red", linewidth=1,
               label=f"upper {bounds.upper:g}")
    ax.set_yticks(range(bounds.processors))
    ax.set_yticklabels([f"proc {p}" for p in range(bounds.processors)])
    ax.set_xlabel("time")
    ax.set_title(
        f"greedy schedule on {bounds.processors} processors: "
        f"makespan {bounds.greedy_makespan:g} "
        f"(critical path {bounds.l_star:g}, total work {bounds.total_work:g})"
    )
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def window_profile(topology: DagTopology, path: str | Path) -> Path:
    """Per-node context windows in topological order, with the path that
    determines the graph window highlighted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    analysis = critical_context_path(topology)
    on_path = set(analysis.path)
    order = list(topology.order)
    windows = [topology.nodes[nid].context_window for nid in order]

    fig, ax = plt.subplots(figsize=(7, 1.0 + 0.35 * len(order)))
    colors = ["tab:blue" if nid in on_path else "tab:gray" for nid in order]
    ax.barh(range(len(order)), windows, color=colors, edgecolor="black",
            linewidth=0.5)
    ax.set_yticks(range(len(order)))
    ax.set_yticklabels(order)
    ax.invert_yaxis()
    ax.set_xlabel("context window (rows)")
    ax.set_title(
        f"graph context window {graph_context_window(topology)} via "
        + " -> ".join(analysis.path)
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def divergence_map(report: ValidationReport, path: str | Path) -> Path:
    """One lane per checked tiling; red marks where it first diverged from
    the reference. Clean lanes are green."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lanes = list(report.checked)
    by_lane: dict[int, list] = {i: [] for i in range(len(lanes))}
    for diff in report.diffs:
        key = (diff.mode, diff.tile_length, diff.offset)
        for i, lane in enumerate(lanes):
            if lane == key:
                by_lane[i].append(diff)

    fig, ax = plt.subplots(figsize=(8, 1.2 + 0.4 * len(lanes)))
    for i, (mode, tau, offset) in enumerate(lanes):
        clean = not by_lane[i]
        ax.hlines(i, report.interval.start, report.interval.end,
                  color="tab:green" if clean else "tab:gray", linewidth=3,
                  alpha=0.5)
        for diff in by_lane[i]:
            ax.plot(diff.first_time, i, "rx", markersize=9)
            ax.annotate(diff.output, (diff.first_time, i),
                        textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_yticks(range(len(lanes)))
    ax.set_yticklabels([f"{m} tau={t} off={o}" for m, t, o in lanes])
    ax.invert_yaxis()
    ax.set_xlabel("time")
    ax.set_title(
        "tiling validation: "
        + ("all tilings reproduce the reference" if report.passed
           else f"first divergences (hint: {report.failure_mode.value})")
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def output_series(outputs: Mapping[str, StreamFrame], out_dir: str | Path) -> list[Path]:
    """One line chart per output: every column over time, gaps where
    missing. Files are named after the output key."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for key in sorted(outputs):
        frame = outputs[key]
        fig, ax = plt.subplots(figsize=(8, 4))
        if frame.n_rows:
            times = np.arange(frame.start, frame.start + frame.n_rows)
            for j, col in enumerate(frame.columns):
                ax.plot(times, frame.values[:, j], label=col.label(), linewidth=1)
        if frame.n_cols and frame.n_cols <= 12:
            ax.legend(fontsize=7)
        ax.set_xlabel("time")
        ax.set_title(f"output {key}")
        fig.tight_layout()
        target = out_dir / f"{key.replace(':', '_')}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)
    return written
