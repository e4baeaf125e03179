"""CSV tables and SVG figures for evaluation and training artifacts.

Output is byte-deterministic: figure ids are content-hashed via svg.hashsalt
and the SVG Date field is suppressed, so re-exporting the same report
reproduces identical files.
"""

from __future__ import annotations

import csv
import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "greenwave"

import numpy as np
from matplotlib import pyplot as plt

from .bench import MetricsReport, SmokeReport, mean_total_delay, report_to_json

_FIGSIZE = (8.0, 5.0)


def _save(fig, path) -> str:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(path)


# -- tables ------------------------------------------------------------------------


def write_per_trip_csv(report: MetricsReport, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "net", "seed", "trip", "delay"])
        for method, net_idx, seed, trip, delay in sorted(report.per_trip_rows):
            w.writerow([method, net_idx, seed, trip, f"{delay:.3f}"])
    return str(path)


def write_per_step_csv(report: MetricsReport, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "net", "seed", "step", "d_t"])
        for (method, net_idx, seed) in sorted(report.per_step):
            series = report.per_step[(method, net_idx, seed)]
            for step, d in enumerate(series):
                w.writerow([method, net_idx, seed, step, f"{d:.4f}"])
    return str(path)


def write_summary_csv(report: MetricsReport, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["method", "trips", "mean", "median", "q1", "q3",
             "mean_total_delay", "paired_mean_vs_ref"]
        )
        for method in report.methods:
            s = report.summary.get(method, {})
            paired = report.paired.get(method)
            w.writerow(
                [
                    method,
                    s.get("count", 0),
                    f"{s.get('mean', 0.0):.3f}",
                    f"{s.get('median', 0.0):.3f}",
                    f"{s.get('q1', 0.0):.3f}",
                    f"{s.get('q3', 0.0):.3f}",
                    f"{mean_total_delay(report, method):.3f}"
                    if method in report.totals
                    else "",
                    "" if paired is None else f"{float(np.mean(paired)) if len(paired) else 0.0:.3f}",
                ]
            )
    return str(path)


def write_paired_csv(report: MetricsReport, path) -> str:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "reference", "rank", "delay_diff"])
        for method in sorted(report.paired):
            for rank, diff in enumerate(report.paired[method]):
                w.writerow([method, report.reference, rank, f"{diff:.3f}"])
    return str(path)


# -- figures ------------------------------------------------------------------------


def plot_delay_box(report: MetricsReport, path) -> str:
    """Per-method distribution of per-trip delays."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    data = []
    labels = []
    for method in report.methods:
        delays = [row[4] for row in report.per_trip_rows if row[0] == method]
        if delays:
            data.append(delays)
            labels.append(method)
    if data:
        ax.boxplot(data, tick_labels=labels, showfliers=False)
    ax.set_ylabel("per-trip delay (s)")
    ax.set_title("Trip delay by method")
    ax.grid(True, axis="y", alpha=0.3)
    fig.autofmt_xdate(rotation=30)
    return _save(fig, path)


def plot_training_curves(
    curves: dict[str, list[list[tuple[int, float]]]], path
) -> str:
    """Validation reward against training step; one line per seed plus the mean."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for method in sorted(curves):
        seed_curves = [c for c in curves[method] if c]
        for c in seed_curves:
            steps, vals = zip(*c)
            ax.plot(steps, vals, alpha=0.25, lw=0.8, color=_method_color(method))
        if seed_curves:
            grid = sorted({s for c in seed_curves for s, _ in c})
            means = []
            for s in grid:
                vals = [dict(c)[s] for c in seed_curves if s in dict(c)]
                means.append(np.mean(vals))
            ax.plot(grid, means, lw=2.0, color=_method_color(method), label=method)
    ax.set_xlabel("training step")
    ax.set_ylabel("validation episode reward")
    ax.set_title("Training progress")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_cumulative_difference(smoke: SmokeReport, path) -> str:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(np.arange(1, len(smoke.cum_diff) + 1), smoke.cum_diff, lw=1.2)
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("evaluation step (s)")
    ax.set_ylabel("cumulative delay difference vs fixed-time")
    ax.set_title(f"Grid of {smoke.n_intersections} intersections, null search budget")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _method_color(method: str) -> str:
    order = [
        "fixed-time", "greedy", "mfgrl", "mujam", "mujam-c",
        "mujam-a", "muim", "mujam-nnl", "mujam-nr",
    ]
    idx = order.index(method) if method in order else len(order)
    return _COLORS[idx % len(_COLORS)]


# -- bundle -------------------------------------------------------------------------


def export_report(
    report: MetricsReport,
    out_dir,
    training_curves: Optional[dict[str, list[list[tuple[int, float]]]]] = None,
    smoke: Optional[SmokeReport] = None,
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = [
        write_per_trip_csv(report, os.path.join(out_dir, "per_trip.csv")),
        write_per_step_csv(report, os.path.join(out_dir, "per_step.csv")),
        write_summary_csv(report, os.path.join(out_dir, "summary.csv")),
        write_paired_csv(report, os.path.join(out_dir, "paired.csv")),
        plot_delay_box(report, os.path.join(out_dir, "delay_box.svg")),
    ]
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(report_to_json(report))
    paths.append(os.path.join(out_dir, "report.json"))
    if training_curves is not None:
        paths.append(
            plot_training_curves(
                training_curves, os.path.join(out_dir, "training_curves.svg")
            )
        )
    if smoke is not None:
        paths.append(
            plot_cumulative_difference(smoke, os.path.join(out_dir, "cum_diff.svg"))
        )
    return paths


def read_val_curve(log_path) -> list[tuple[int, float]]:
    """(step, validation reward) pairs from a training log CSV."""
    out = []
    with open(log_path, newline="") as f:
        for row in csv.DictReader(f):
            if row["val_reward"]:
                out.append((int(row["step"]), float(row["val_reward"])))
    return out
