"""Report figures: rc defaults plus a few savers. Uses the Agg backend so it
works without a display."""

from __future__ import annotations

from math import sqrt
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

golden_mean = (sqrt(5.0) - 1.0) / 2.0
fig_width = 6.0  # inches
fig_size = (fig_width, fig_width * golden_mean)
colors = ["#2b8cbe", "#e34a33", "#31a354", "#756bb1", "#636363"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "figure.figsize": fig_size,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "lines.linewidth": 1.2,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def loss_curves(history, path, keys=("L_recon", "L_adv_gen", "L_adv_disc", "L_pitch", "L_fm")) -> Path:
    """One log-scale panel per loss term over training steps."""
    with plt.rc_context(params):
        fig, axes = plt.subplots(len(keys), 1, sharex=True,
                                 figsize=(fig_width, 1.4 * len(keys)))
        steps = [row["step"] for row in history]
        for ax, key in zip(axes, keys):
            values = [row[key] for row in history]
            ax.plot(steps, values)
            if min(values, default=0) > 0:
                ax.set_yscale("log")
            ax.set_ylabel(key)
        axes[-1].set_xlabel("step")
        return _save(fig, path)


def accuracy_bars(accuracies: dict, path, chance: dict | None = None) -> Path:
    """Grouped bars of probe accuracy per row, with optional chance lines."""
    cols = ("voice_id", "accent")
    rows = list(accuracies)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        width = 0.8 / len(cols)
        for j, col in enumerate(cols):
            xs = [i + (j - (len(cols) - 1) / 2) * width for i in range(len(rows))]
            vals = [accuracies[r].get(col) for r in rows]
            ax.bar([x for x, v in zip(xs, vals) if v is not None],
                   [v for v in vals if v is not None], width, label=col)
            if chance and chance.get(col) is not None:
                ax.axhline(chance[col], color=colors[j], linestyle=":", linewidth=1)
        ax.set_xticks(range(len(rows)), rows)
        ax.set_ylim(0, 100)
        ax.set_ylabel("accuracy (%)")
        ax.legend()
        return _save(fig, path)


def similarity_bars(matrix: dict, path, title: str = "") -> Path:
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        names = list(matrix)
        ax.bar(names, [matrix[n] for n in names], color=[colors[i % len(colors)] for i in range(len(names))])
        ax.set_ylim(0, 1)
        ax.set_ylabel("mean similarity")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def f0_contours(contours: dict, path, hop_seconds: float) -> Path:
    """Overlay voiced f0 of several contours (name -> F0Contour)."""
    import numpy as np

    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for name, c in contours.items():
            t = np.arange(len(c)) * hop_seconds
            f = np.where(c.voiced, c.f0_hz, np.nan)
            ax.plot(t, f, label=name)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("f0 (Hz)")
        ax.legend()
        return _save(fig, path)
