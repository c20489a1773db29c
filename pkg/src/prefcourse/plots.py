"""Figure rendering for benchmark reports.

Reads the delimited outputs back rather than taking in-memory results, so
the figures can be regenerated from any archived run directory.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_rank_sweep(tsweep_csv, out_png) -> Path:
    """Mean rank vs question budget, one line per selection strategy."""
    rows = _read_csv(tsweep_csv)
    series: dict[tuple[str, str], dict[int, list[float]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for row in rows:
        key = (row["dataset"], row["strategy"])
        series[key][int(row["T"])].append(float(row["mean_rank"]))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for (ds, strategy), by_t in sorted(series.items()):
        ts = sorted(by_t)
        means = [sum(by_t[t]) / len(by_t[t]) for t in ts]
        ax.plot(ts, means, marker="o", label=f"{ds}/{strategy}")
    ax.set_xlabel("questions answered")
    ax.set_ylabel("mean rank (normalized)")
    ax.set_ylim(bottom=0.0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_cost_bars(report_csv, out_png, metric_by_method=None) -> Path:
    """Per-method mean cost bars with std whiskers at each recourse budget."""
    if metric_by_method is None:
        metric_by_method = {
            "reap-grad": "cost",
            "wachter": "cost",
            "reap-graph": "path_cost",
            "face": "path_cost",
        }
    rows = _read_csv(report_csv)
    picked = [
        r
        for r in rows
        if r["method"] in metric_by_method and r["metric"] == metric_by_method[r["method"]]
    ]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    labels = [f"{r['method']}\nT={r['T']}" for r in picked]
    means = [float(r["mean"]) for r in picked]
    stds = [float(r["std"]) for r in picked]
    ax.bar(range(len(picked)), means, yerr=stds, capsize=3, color="#4878b0")
    ax.set_xticks(range(len(picked)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("truth cost")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_timing(timing_csv, out_png) -> Path:
    """Selection wall time vs pool size on log-log axes."""
    rows = _read_csv(timing_csv)
    ns = [int(r["N"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(ns, [float(r["exhaustive_ms"]) for r in rows], marker="o", label="exhaustive")
    ax.plot(ns, [float(r["heuristic_ms"]) for r in rows], marker="s", label="similar-cost")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("pool size")
    ax.set_ylabel("selection time (ms)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_report_figures(run_dir) -> list[Path]:
    """Render every figure whose source CSV exists in a run directory."""
    run_dir = Path(run_dir)
    out = []
    if (run_dir / "tsweep.csv").exists():
        out.append(render_rank_sweep(run_dir / "tsweep.csv", run_dir / "rank_sweep.png"))
    if (run_dir / "report.csv").exists():
        out.append(render_cost_bars(run_dir / "report.csv", run_dir / "cost_bars.png"))
    if (run_dir / "timing.csv").exists():
        out.append(render_timing(run_dir / "timing.csv", run_dir / "timing.png"))
    return out
