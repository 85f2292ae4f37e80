"""Heatmap rendering for error surfaces and improvement densities.

Figures are a reporting convenience layered on top of the CSV output — the
delimited files remain the ground truth and are written whether or not
rendering is enabled.  Rendering uses the Agg backend with pinned figure
geometry and dpi so that rerunning a sweep reproduces each PNG byte for byte.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_heatmap"]

_FIGSIZE = (6.4, 4.8)
_DPI = 110


def render_heatmap(
    path: str,
    cells: dict[tuple[float, float], float],
    x_label: str,
    y_label: str,
    title: str,
    log_scale: bool = False,
) -> None:
    """Render a (key1, key2) -> value mapping as an annotated heatmap PNG.

    Cell keys need not form a complete rectangle; missing combinations render
    as blanks.  ``log_scale`` colors by log10 of the value (for error
    magnitudes spanning decades) while annotations keep the raw values.
    """
    xs = sorted({k[0] for k in cells})
    ys = sorted({k[1] for k in cells})
    grid = np.full((len(ys), len(xs)), math.nan)
    for (x, y), value in cells.items():
        grid[ys.index(y), xs.index(x)] = value

    shown = grid.copy()
    if log_scale:
        with np.errstate(divide="ignore", invalid="ignore"):
            shown = np.log10(np.abs(grid))

    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    im = ax.imshow(shown, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(xs)), [f"{v:g}" for v in xs])
    ax.set_yticks(range(len(ys)), [f"{v:g}" for v in ys])
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.set_title(title)
    for i in range(len(ys)):
        for j in range(len(xs)):
            if math.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.2g}", ha="center", va="center",
                        fontsize=7, color="white")
    fig.colorbar(im, ax=ax, label=("log10 " if log_scale else "") + "value")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
