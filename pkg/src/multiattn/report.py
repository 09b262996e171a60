"""Figures written next to the CSV/JSON reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}

METRIC_COLORS = {
    "sexual_f1": "#4c72b0",
    "indirect_f1": "#dd8452",
    "physical_f1": "#55a868",
    "harassment_f1": "#c44e52",
    "f1_macro": "#8172b3",
}


def _save(fig, path):
    # no timestamps in the PNG, so reruns produce identical files
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_history(history: dict, path) -> None:
    epochs = [e["epoch"] for e in history["epochs"]]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(epochs, [e["loss"] for e in history["epochs"]], "o-", ms=3, color="#4c72b0", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, [e["val_auc_avg"] for e in history["epochs"]], "s--", ms=3, color="#c44e52",
                 label="val avg AUC")
        ax2.set_ylabel("average AUC")
        ax2.spines["top"].set_visible(False)
        best = history.get("best_epoch")
        if best:
            ax.axvline(best, color="0.6", lw=0.8, ls=":")
        lines = ax.get_lines()[:1] + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="center right", frameon=False)
        _save(fig, path)


def plot_bench(rows: list, path, columns) -> None:
    """Grouped bars, one group per variant, error bars from the run spread."""
    import numpy as np

    names = [r.variant for r in rows]
    x = np.arange(len(names))
    width = 0.8 / len(columns)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(names)), 3.4))
        for i, col in enumerate(columns):
            ax.bar(x + (i - (len(columns) - 1) / 2) * width, [r.mean[col] for r in rows], width,
                   yerr=[r.std[col] for r in rows], capsize=1.5, color=METRIC_COLORS.get(col), label=col,
                   error_kw={"lw": 0.6})
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("F1")
        ax.set_ylim(0, 1)
        ax.legend(ncol=len(columns), loc="upper center", bbox_to_anchor=(0.5, 1.15), frameon=False)
        _save(fig, path)


def plot_distribution(dist: list[dict], path) -> None:
    import numpy as np

    cats = ["harassment_pct", "indirect_pct", "sexual_pct", "physical_pct"]
    x = np.arange(len(dist))
    width = 0.2
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for i, c in enumerate(cats):
            ax.bar(x + (i - 1.5) * width, [d[c] for d in dist], width, label=c.replace("_pct", ""))
        ax.set_xticks(x)
        ax.set_xticklabels([f"{d['split']}\n(n={d['tweets']})" for d in dist])
        ax.set_ylabel("% of tweets")
        ax.legend(frameon=False)
        _save(fig, path)
