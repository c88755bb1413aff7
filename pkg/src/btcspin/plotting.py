"""Deterministic static SVG figures."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyDataset

# marker semantics for fixed points: filled = stable, open/dashed = unstable
CLASS_STYLE = {
    "ATTRACTOR": dict(marker="o", facecolor="tab:red", edgecolor="tab:red", linestyle="-"),
    "REPELLER": dict(marker="o", facecolor="none", edgecolor="tab:red", linestyle="--"),
    "SADDLE": dict(marker="s", facecolor="none", edgecolor="tab:red", linestyle="--"),
    "MARGINAL": dict(marker="s", facecolor="tab:red", edgecolor="tab:red", linestyle="-"),
}


@dataclass
class PlotSpec:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    xlim: tuple | None = None
    ylim: tuple | None = None
    logx: bool = False
    logy: bool = False
    comment: str = ""  # embedded as an XML comment, e.g. the config digest


@dataclass
class Dataset:
    """Curves, classified markers and an optional labelled grid."""

    lines: list = field(default_factory=list)  # (x, y, label)
    points: list = field(default_factory=list)  # (x, y, tag)
    grid: tuple | None = None  # (x_centres, y_centres, int labels [ny, nx], label names)

    def is_empty(self) -> bool:
        return not self.lines and not self.points and self.grid is None


def _figure():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    matplotlib.rcParams.update({"svg.hashsalt": "btcspin", "svg.fonttype": "none", "path.simplify": False})
    return plt


def render_svg(dataset: Dataset, spec: PlotSpec) -> str:
    if dataset is None or dataset.is_empty():
        raise EmptyDataset("nothing to plot")
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if dataset.grid is not None:
        xs, ys, labels, names = dataset.grid
        labels = np.asarray(labels)
        cmap = plt.get_cmap("Set2", max(len(names), 1))
        ax.pcolormesh(xs, ys, labels, cmap=cmap, vmin=-0.5, vmax=len(names) - 0.5, shading="nearest")
        for i, name in enumerate(names):
            ax.plot([], [], "s", color=cmap(i), label=name)
    for x, y, label in dataset.lines:
        ax.plot(x, y, lw=0.8, label=label or None)
    for x, y, tag in dataset.points:
        style = CLASS_STYLE.get(str(tag))
        if style is None:
            ax.plot([x], [y], ".", color="k", ms=4)
        else:
            ax.scatter([x], [y], s=60, marker=style["marker"], facecolors=style["facecolor"],
                       edgecolors=style["edgecolor"], linestyle=style["linestyle"], zorder=5)
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    if spec.xlim:
        ax.set_xlim(*spec.xlim)
    if spec.ylim:
        ax.set_ylim(*spec.ylim)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    if any(lbl for _, _, lbl in dataset.lines) or dataset.grid is not None:
        ax.legend(fontsize=7, loc="best")
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    svg = buf.getvalue()
    if spec.comment:
        safe = spec.comment.replace("--", "- -")
        head, sep, rest = svg.partition("?>")
        svg = f"{head}{sep}\n<!-- {safe} -->{rest}" if sep else f"<!-- {safe} -->\n{svg}"
    return svg


def emit_svg(dataset: Dataset, spec: PlotSpec, path) -> None:
    """Write a standalone SVG; identical inputs give identical bytes."""
    svg = render_svg(dataset, spec)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
