"""Static SVG figures written by the command-line interface.

Output is byte-stable for identical inputs: the SVG hash salt is fixed and
the creation date is omitted.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import RESPONSE_LABELS, RESPONSES  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "panelvar"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, path) -> None:
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def _label(name: str) -> str:
    return RESPONSE_LABELS.get(name, name)


def irf_grid(result, path) -> None:
    """Responses in rows, shocks in columns; mean line with the credible band."""
    n = len(result.names)
    fig, axes = plt.subplots(n, n, figsize=(2.6 * n, 2.1 * n), sharex=True, squeeze=False)
    h = result.horizons
    for i in range(n):
        for j in range(n):
            ax = axes[i, j]
            ax.fill_between(h, result.lower[:, i, j], result.upper[:, i, j],
                            color="tab:blue", alpha=0.25, linewidth=0.8)
            ax.plot(h, result.mean[:, i, j], color="tab:blue", linewidth=1.2)
            ax.axhline(0.0, color="grey", linewidth=0.6, linestyle="--")
            if i == 0:
                ax.set_title(f"shock: {_label(result.names[j])}", fontsize=9)
            if j == 0:
                ax.set_ylabel(_label(result.names[i]), fontsize=9)
            if i == n - 1:
                ax.set_xlabel("weeks", fontsize=8)
            ax.tick_params(labelsize=7)
    fig.suptitle(f"{result.kind}", fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def coefficient_forest(summaries, npi_names: Sequence[str], path) -> None:
    """One panel per response: NPI level and change effects with 95% intervals."""
    by_name = {s.name: s for s in summaries}
    K = len(npi_names)
    fig, axes = plt.subplots(1, len(RESPONSES), figsize=(3.2 * len(RESPONSES), 0.45 * K + 1.6),
                             sharey=True, squeeze=False)
    ypos = np.arange(K)
    for r, resp in enumerate(RESPONSES):
        ax = axes[0, r]
        for block, off, color in (("lambda", -0.15, "tab:blue"), ("delta", 0.15, "tab:orange")):
            rows = [by_name.get(f"{block}.{resp}.{k}") for k in npi_names]
            if any(s is None for s in rows):
                continue
            m = np.array([s.mean for s in rows])
            lo = np.array([s.cri_low for s in rows])
            hi = np.array([s.cri_high for s in rows])
            ax.errorbar(m, ypos + off, xerr=[m - lo, hi - m], fmt="o", ms=3, color=color,
                        elinewidth=1, label="level" if block == "lambda" else "change")
        ax.axvline(0.0, color="grey", linewidth=0.6, linestyle="--")
        ax.set_title(_label(resp), fontsize=9)
        ax.tick_params(labelsize=7)
    axes[0, 0].set_yticks(ypos, list(npi_names))
    axes[0, 0].invert_yaxis()
    axes[0, -1].legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def forecast_scatter(table, path) -> None:
    """Observed against model and naive one-step forecasts, one panel per response."""
    fig, axes = plt.subplots(1, len(RESPONSES), figsize=(3.2 * len(RESPONSES), 3.2), squeeze=False)
    for r, resp in enumerate(RESPONSES):
        ax = axes[0, r]
        sub = table[table["variable"] == resp]
        ax.scatter(sub["observed"], sub["naive"], s=4, alpha=0.4, color="tab:grey", label="naive")
        ax.scatter(sub["observed"], sub["model"], s=4, alpha=0.5, color="tab:blue", label="model")
        if len(sub):
            lo = float(np.nanmin(sub[["observed", "model", "naive"]].to_numpy()))
            hi = float(np.nanmax(sub[["observed", "model", "naive"]].to_numpy()))
            ax.plot([lo, hi], [lo, hi], color="black", linewidth=0.6)
        ax.set_title(_label(resp), fontsize=9)
        ax.set_xlabel("observed", fontsize=8)
        ax.tick_params(labelsize=7)
    axes[0, 0].set_ylabel("forecast", fontsize=8)
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def cluster_scatter(clusters, path) -> None:
    """First two principal-component scores coloured by cluster."""
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    x = clusters["Dim.1"].to_numpy()
    y = clusters["Dim.2"].to_numpy() if "Dim.2" in clusters else np.zeros_like(x)
    ax.scatter(x, y, c=clusters["cluster"].to_numpy(), cmap="tab10", s=20)
    for name, xi, yi in zip(clusters.index, x, y):
        ax.annotate(str(name), (xi, yi), fontsize=6, xytext=(2, 2), textcoords="offset points")
    ax.set_xlabel("Dim.1")
    ax.set_ylabel("Dim.2")
    fig.tight_layout()
    _save(fig, path)
