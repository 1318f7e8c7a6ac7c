"""Render charts from nccl-lab run artifacts.

Inputs are the CSV/JSON files a run directory contains; nothing here
writes back into a run directory. All figures use the committed style
module so repeated renders are byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib.pyplot as plt

from .style import BAR_COLOR, BAR_COLORS, DIAGONAL_COLOR, apply_style

RELIABILITY_COLUMNS = ["task", "bin_lo", "bin_hi", "count", "acc", "conf"]
COMPARE_COLUMNS = ["config_id", "metric", "seeds", "mean", "std", "delta",
                   "direction"]


def load_reliability(bins_csv) -> dict[int, list[dict]]:
    """Parse a reliability_bins.csv into per-task bin rows.

    Raises ValueError naming the offending row (1-based file line) on
    any malformed cell, and rejects a wrong header outright.
    """
    per_task: dict[int, list[dict]] = {}
    with open(bins_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RELIABILITY_COLUMNS:
            raise ValueError(f"{bins_csv}: expected header "
                             f"{','.join(RELIABILITY_COLUMNS)}, got "
                             f"{reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                parsed = {"task": int(row["task"]),
                          "bin_lo": float(row["bin_lo"]),
                          "bin_hi": float(row["bin_hi"]),
                          "count": int(row["count"]),
                          "acc": float(row["acc"]),
                          "conf": float(row["conf"])}
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{bins_csv}: malformed row {lineno}: "
                                 f"{row}") from exc
            per_task.setdefault(parsed["task"], []).append(parsed)
    if not per_task:
        raise ValueError(f"{bins_csv}: no data rows")
    return per_task


def reliability_figure(bins: list[dict], title: str):
    """Accuracy-vs-confidence bars for one task; empty bins omitted."""
    apply_style()
    fig, ax = plt.subplots()
    occupied = [b for b in bins if b["count"] > 0]
    xs = [b["conf"] for b in occupied]
    heights = [b["acc"] for b in occupied]
    widths = [0.9 * (b["bin_hi"] - b["bin_lo"]) for b in occupied]
    ax.bar(xs, heights, width=widths, color=BAR_COLOR,
           edgecolor="black", linewidth=0.5, label="accuracy")
    ax.plot([0, 1], [0, 1], linestyle="--", color=DIAGONAL_COLOR,
            label="perfect calibration")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    ax.set_title(title)
    ax.legend(loc="upper left")
    return fig


def render_reliability(bins_csv, out_dir, prefix="") -> list[Path]:
    """One reliability-diagram PNG per task found in the CSV."""
    per_task = load_reliability(bins_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for task in sorted(per_task):
        fig = reliability_figure(per_task[task], f"reliability, task {task}")
        path = out_dir / f"{prefix}reliability_task{task}.png"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def load_comparison(compare_csv) -> dict[str, list[dict]]:
    """Parse a compare table into rows grouped by metric."""
    per_metric: dict[str, list[dict]] = {}
    with open(compare_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COMPARE_COLUMNS:
            raise ValueError(f"{compare_csv}: expected header "
                             f"{','.join(COMPARE_COLUMNS)}, got "
                             f"{reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                parsed = {"config_id": row["config_id"],
                          "metric": row["metric"],
                          "seeds": int(row["seeds"]),
                          "mean": float(row["mean"]),
                          "std": float(row["std"]),
                          "delta": float(row["delta"]),
                          "direction": row["direction"]}
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{compare_csv}: malformed row {lineno}: "
                                 f"{row}") from exc
            if parsed["direction"] not in "+-=":
                raise ValueError(f"{compare_csv}: malformed row {lineno}: "
                                 f"bad direction {parsed['direction']!r}")
            per_metric.setdefault(parsed["metric"], []).append(parsed)
    if not per_metric:
        raise ValueError(f"{compare_csv}: no data rows")
    return per_metric


def comparison_figure(metric: str, rows: list[dict]):
    """Per-config mean bars with seed-spread error bars for one metric.

    Non-baseline bars are annotated with the table's direction marker so
    the chart and the CSV cannot disagree about who improved.
    """
    apply_style()
    fig, ax = plt.subplots()
    rows = sorted(rows, key=lambda r: r["config_id"])
    xs = range(len(rows))
    colors = [BAR_COLORS[i % len(BAR_COLORS)] for i in xs]
    ax.bar(xs, [r["mean"] for r in rows], yerr=[r["std"] for r in rows],
           color=colors, edgecolor="black", linewidth=0.5, capsize=4)
    marker = {"+": "▲", "-": "▼", "=": ""}
    for x, row in zip(xs, rows):
        if row["delta"] != 0.0:
            ax.annotate(f"{marker[row['direction']]} {row['delta']:+.3g}",
                        (x, row["mean"]), textcoords="offset points",
                        xytext=(0, 10), ha="center", fontsize=8)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r["config_id"] for r in rows], rotation=20,
                       ha="right", fontsize=8)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} across configs "
                 f"({rows[0]['seeds']} seed(s) each)")
    return fig


def render_comparison(compare_csv, out_dir, prefix="") -> list[Path]:
    """One grouped-bar PNG per metric column in the compare table."""
    per_metric = load_comparison(compare_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in sorted(per_metric):
        fig = comparison_figure(metric, per_metric[metric])
        path = out_dir / f"{prefix}compare_{metric}.png"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths
