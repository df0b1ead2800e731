"""Figure rendering for the report directory.

Everything draws through the Agg backend straight to PNG files next to
the delimited output; nothing here opens a window.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams.update({
    "figure.figsize": (6.4, 4.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
})


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def moment_figure(reports, path, title="moment sums"):
    """Measured values (solid) against predicted mains (dashed) over X.

    Reports are grouped per (k, weighting) curve; groups with a single
    point still draw as markers.
    """
    groups: dict[tuple, list] = {}
    for rep in reports:
        groups.setdefault((rep.k, rep.weighting), []).append(rep)
    fig, ax = plt.subplots()
    for (k, weighting), reps in sorted(groups.items()):
        reps = sorted(reps, key=lambda r: r.X)
        xs = [r.X for r in reps]
        ax.plot(xs, [r.value for r in reps], marker="o",
                label=f"k={k} {weighting}")
        pred = [(r.X, r.predicted_main) for r in reps
                if r.predicted_main is not None]
        if pred:
            ax.plot([p[0] for p in pred], [p[1] for p in pred],
                    linestyle="--", color=ax.lines[-1].get_color(),
                    label=f"k={k} predicted")
    ax.set_xscale("log")
    positive = [r.value for r in reports if r.value > 0]
    if positive:
        ax.set_yscale("log")
    ax.set_xlabel("X")
    ax.set_ylabel("moment sum")
    ax.set_title(title)
    ax.legend()
    return _finish(fig, path)


def ratio_figure(reports, path, x_values=None, x_label="X",
                 title="measured / predicted"):
    """Ratio against a chosen abscissa, with the y=1 reference line."""
    reps = [r for r in reports if r.ratio is not None]
    if x_values is None:
        x_values = [r.X for r in reps]
    fig, ax = plt.subplots()
    ax.plot(list(x_values), [r.ratio for r in reps], marker="s")
    ax.axhline(1.0, color="black", linewidth=0.8, linestyle=":")
    ax.set_xlabel(x_label)
    ax.set_ylabel("ratio")
    ax.set_title(title)
    return _finish(fig, path)


def distribution_figure(report, path):
    """Two panels: standardized histograms and quantile curves."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.2, 4.0))

    edges = np.asarray(report.bin_edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    ax1.bar(mids, report.hist_true, width=width, alpha=0.55,
            label="log|L| standardized")
    ax1.bar(mids, report.hist_proxy, width=width, alpha=0.55,
            label="prime-sum proxy")
    dens = np.exp(-mids ** 2 / 2.0) / math.sqrt(2.0 * math.pi)
    ax1.plot(mids, dens, color="black", linewidth=1.2, label="normal pdf")
    ax1.set_xlabel("standardized value")
    ax1.set_ylabel("density")
    ax1.legend()

    levels = report.quantile_levels
    ax2.plot(levels, report.quantiles_true, marker="o", label="true")
    ax2.plot(levels, report.quantiles_proxy, marker="s", label="proxy")
    ax2.plot(levels, report.quantiles_normal, color="black",
             linestyle="--", label="normal")
    ax2.set_xlabel("quantile level")
    ax2.set_ylabel("quantile")
    ax2.legend()

    fig.suptitle(f"X = {report.X:g}, {report.sample_count} family members, "
                 f"sup-distance to normal {report.ks_true_normal:.3f}")
    fig.tight_layout()
    return _finish(fig, path)
