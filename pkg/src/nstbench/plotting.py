"""Matplotlib figures for benchmark reports and loss traces (files only, Agg)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_rates(records, path):
    """Grouped bars: iterations/minute per resolution, one bar per model/backend."""
    with plt.rc_context(STYLE):
        cols = []
        for r in records:
            if (r.model, r.backend) not in cols:
                cols.append((r.model, r.backend))
        resolutions = sorted({r.resolution for r in records})
        index = {(r.model, r.backend, r.resolution): r for r in records}
        fig, ax = plt.subplots()
        width = 0.8 / len(cols)
        x = np.arange(len(resolutions))
        for j, (m, b) in enumerate(cols):
            vals = []
            for res in resolutions:
                rec = index.get((m, b, res))
                vals.append(rec.iters_per_min if rec is not None and rec.status == "ok" else 0.0)
            ax.bar(x + (j - (len(cols) - 1) / 2) * width, vals, width, label=f"{m} ({b})")
        ax.set_xticks(x, [f"{r} px" for r in resolutions])
        ax.set_ylabel("iterations per minute")
        ax.set_yscale("log")
        ax.legend()
        _save(fig, path)


def plot_cumulative(records, path):
    """Cumulative iterations over minutes 1-5 for every measured cell."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        minutes = np.arange(1, 6)
        for r in records:
            if r.status != "ok":
                continue
            ax.plot(minutes, r.iters_per_min * minutes, marker="o", ms=3,
                    label=f"{r.model} ({r.backend}) {r.resolution} px")
        ax.set_xlabel("minutes")
        ax.set_ylabel("iterations")
        ax.set_xticks(minutes)
        ax.legend(fontsize=6, ncol=2)
        _save(fig, path)


def plot_loss_trace(report, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        it = [r.iteration for r in report.records]
        ax.plot(it, [r.total for r in report.records], label="total")
        ax.plot(it, [r.content for r in report.records], label="content", lw=0.8)
        ax.plot(it, [r.style for r in report.records], label="style", lw=0.8)
        ax.set_yscale("symlog", linthresh=1e-6)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend()
        _save(fig, path)
