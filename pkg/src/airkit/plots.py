"""Figures for evaluation summaries, written next to their CSV tables."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from airkit.program import OP_KINDS  # noqa: E402

plt.rcParams["font.size"] = 10
plt.rcParams["axes.titlesize"] = 11
plt.rcParams["savefig.dpi"] = 120

SOURCE_COLORS = {
    "human-correct": "tab:green",
    "human-incorrect": "tab:red",
    "human-total": "tab:gray",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def _as_matrix(rows) -> np.ndarray:
    return np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)


def plot_temporal_matrix(mean, bins, source: str, path) -> Path:
    """Heatmap of mean AiR-E per (time bin, reasoning step)."""
    mean = _as_matrix(mean)
    fig, ax = plt.subplots(figsize=(1.2 + 0.8 * max(mean.shape[1], 1), 1.0 + 0.6 * mean.shape[0]))
    lim = np.nanmax(np.abs(mean)) if np.isfinite(mean).any() else 1.0
    im = ax.imshow(mean, cmap="RdBu_r", vmin=-lim, vmax=lim, aspect="auto")
    ax.set_xticks(range(mean.shape[1]))
    ax.set_xticklabels([str(j) for j in range(mean.shape[1])])
    ax.set_yticks(range(mean.shape[0]))
    ax.set_yticklabels([f"{lo / 1000:g}-{hi / 1000:g}s" for lo, hi in bins])
    ax.set_xlabel("reasoning step")
    ax.set_title(f"AiR-E over time: {source}")
    for (i, j), v in np.ndenumerate(mean):
        if np.isfinite(v):
            ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, Path(path))


def plot_kind_means(kind_means: dict, path) -> Path:
    """Grouped bars: corpus mean AiR-E per operation kind, one bar per source."""
    sources = sorted(kind_means)
    kinds = [k.value for k in OP_KINDS]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    width = 0.8 / max(len(sources), 1)
    for i, source in enumerate(sources):
        vals = [kind_means[source].get(k, {}).get("mean_over_questions", np.nan) for k in kinds]
        vals = [np.nan if v is None else v for v in vals]
        ax.bar(np.arange(len(kinds)) + i * width, vals, width, label=source,
               color=SOURCE_COLORS.get(source))
    ax.axhline(0, color="black", lw=0.8)
    ax.set_xticks(np.arange(len(kinds)) + width * (len(sources) - 1) / 2)
    ax.set_xticklabels(kinds)
    ax.set_ylabel("mean AiR-E")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, Path(path))


def plot_correlations(correlations: dict, path) -> Path:
    sources = sorted(correlations)
    kinds = [k.value for k in OP_KINDS]
    grid = np.full((len(sources), len(kinds)), np.nan)
    sig = np.zeros_like(grid, dtype=bool)
    for i, s in enumerate(sources):
        for j, k in enumerate(kinds):
            c = correlations[s]["kinds"].get(k)
            if c and c.get("r") is not None:
                grid[i, j] = c["r"]
                sig[i, j] = c["significant"]
    fig, ax = plt.subplots(figsize=(8, 0.8 + 0.5 * max(len(sources), 1)))
    im = ax.imshow(grid, cmap="RdBu_r", vmin=-1, vmax=1, aspect="auto")
    ax.set_xticks(range(len(kinds)))
    ax.set_xticklabels(kinds)
    ax.set_yticks(range(len(sources)))
    ax.set_yticklabels(sources)
    for (i, j), v in np.ndenumerate(grid):
        if np.isfinite(v):
            ax.text(j, i, f"{v:.2f}" + ("*" if sig[i, j] else ""), ha="center", va="center", fontsize=8,
                    fontweight="bold" if sig[i, j] else "normal")
    ax.set_title("Pearson r: AiR-E vs task performance")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, Path(path))


def plot_accuracy_histogram(accuracy: dict, path) -> Path:
    counts = accuracy["histogram"]["counts"]
    edges = accuracy["histogram"]["edges"]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", color="tab:blue", edgecolor="white")
    ax.set_xlabel("answer accuracy")
    ax.set_ylabel("questions")
    if accuracy.get("mean") is not None:
        ax.set_title(f"{100 * accuracy['mean']:.2f} +- {100 * accuracy['sd']:.2f}%")
    return _save(fig, Path(path))


def _kind_means_csv(kind_means: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "kind", "mean_over_questions", "mean_over_steps", "n_questions", "n_steps"])
    for source in sorted(kind_means):
        for kind in sorted(kind_means[source]):
            m = kind_means[source][kind]
            w.writerow([source, kind, m["mean_over_questions"], m["mean_over_steps"], m["n_questions"], m["n_steps"]])
    return buf.getvalue()


def _correlation_csv(correlations: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source"] + [k.value for k in OP_KINDS])
    for source in sorted(correlations):
        row = [source]
        for k in OP_KINDS:
            c = correlations[source]["kinds"].get(k.value)
            if not c or c.get("r") is None:
                row.append("NA")
            else:
                row.append(f"{c['r']:.12g}" + ("*" if c["significant"] else ""))
        w.writerow(row)
    return buf.getvalue()


def render_report(run_dir, out_dir=None) -> list[Path]:
    """Render figures and tables from a run directory's ``summary.json``."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "figures"
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    bins = summary["config"]["bins"]
    for source, tm in sorted(summary["temporal_means"].items()):
        written.append(plot_temporal_matrix(tm["mean"], bins, source, out / f"temporal_{source}.png"))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin"] + [f"step_{j}" for j in range(len(tm["mean"][0]) if tm["mean"] else 0)])
        for i, row in enumerate(tm["mean"]):
            w.writerow([i] + ["" if v is None else v for v in row])
        (out / f"temporal_{source}.csv").write_text(buf.getvalue(), encoding="utf-8")
        written.append(out / f"temporal_{source}.csv")
    if summary["kind_means"]:
        written.append(plot_kind_means(summary["kind_means"], out / "kind_means.png"))
        (out / "kind_means.csv").write_text(_kind_means_csv(summary["kind_means"]), encoding="utf-8")
        written.append(out / "kind_means.csv")
    if summary["correlations"]:
        written.append(plot_correlations(summary["correlations"], out / "correlation.png"))
        (out / "correlation.csv").write_text(_correlation_csv(summary["correlations"]), encoding="utf-8")
        written.append(out / "correlation.csv")
    if summary.get("accuracy"):
        written.append(plot_accuracy_histogram(summary["accuracy"], out / "accuracy_histogram.png"))
    return written
