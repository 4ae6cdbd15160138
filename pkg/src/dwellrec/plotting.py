"""PNG figures for the report commands (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_METRICS = (("auc", "AUC"), ("mrr", "MRR"), ("ndcg5", "nDCG@5"), ("ndcg10", "nDCG@10"))

_STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "dwellrec",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_variants(rows: Sequence[dict], path, title: str = "") -> Path:
    """Grouped bars, one group per metric, one bar per variant, std as error bars."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        width = 0.8 / max(len(rows), 1)
        for i, row in enumerate(rows):
            xs = [j + (i - (len(rows) - 1) / 2) * width for j in range(len(_METRICS))]
            means = [row[f"{m}_mean"] for m, _ in _METRICS]
            errs = [row[f"{m}_std"] or 0.0 for m, _ in _METRICS]
            ax.bar(xs, means, width, yerr=errs, capsize=2, label=str(row["variant"]))
        ax.set_xticks(range(len(_METRICS)), [label for _, label in _METRICS])
        lo = min(row[f"{m}_mean"] for row in rows for m, _ in _METRICS)
        ax.set_ylim(max(0.0, lo - 0.05), None)
        ax.legend(frameon=False, fontsize=8)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_sweep(rows: Sequence[dict], path) -> Path:
    """One panel per metric against the dwell threshold."""
    ts = [row["threshold"] for row in rows]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, 4, figsize=(10, 2.6))
        for ax, (m, label) in zip(axes, _METRICS):
            means = [row[f"{m}_mean"] for row in rows]
            errs = [row[f"{m}_std"] or 0.0 for row in rows]
            ax.errorbar(range(len(ts)), means, yerr=errs, marker="o", capsize=2)
            ax.set_xticks(range(len(ts)), [f"{t:g}" for t in ts])
            ax.set_xlabel("threshold T (s)")
            ax.set_title(label)
        return _save(fig, path)


def plot_weights(rows: Sequence[dict], path) -> Path:
    """Learned w_p and w_n per run."""
    labels = [f"{r['variant']}:{r['seed']}" if r.get("variant") else str(r["seed"]) for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(3.2, 0.45 * len(rows) + 1.5), 3.0))
        xs = range(len(rows))
        ax.bar([x - 0.2 for x in xs], [r["w_p"] for r in rows], 0.4, label="$w_p$")
        ax.bar([x + 0.2 for x in xs], [r["w_n"] for r in rows], 0.4, label="$w_n$")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(list(xs), labels, rotation=45 if len(rows) > 6 else 0, ha="right" if len(rows) > 6 else "center")
        ax.set_xlabel("run")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_topic_nf(rows: Sequence[dict], path) -> Path:
    """Median NF ratio per topic with inter-quartile whiskers."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(rows) + 1.5), 3.0))
        xs = list(range(len(rows)))
        med = [r["median"] for r in rows]
        lower = [r["median"] - r["q1"] for r in rows]
        upper = [r["q3"] - r["median"] for r in rows]
        ax.errorbar(xs, med, yerr=[lower, upper], fmt="o", capsize=3, label="median (IQR)")
        ax.plot(xs, [r["mean_nf_ratio"] for r in rows], "x", label="mean")
        ax.set_xticks(xs, [r["topic"] for r in rows], rotation=45, ha="right")
        ax.set_ylabel("NF ratio")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False, fontsize=8)
        return _save(fig, path)


def plot_training(log: Sequence[dict], path) -> Path:
    """Training loss and validation AUC per epoch."""
    epochs = [r["epoch"] for r in log]
    with plt.rc_context(_STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(6.4, 2.6))
        a.plot(epochs, [r["train_loss"] for r in log], marker="o")
        a.set_xlabel("epoch")
        a.set_title("train loss")
        b.plot(epochs, [r["val_auc"] for r in log], marker="o")
        b.set_xlabel("epoch")
        b.set_title("validation AUC")
        return _save(fig, path)
