"""Render matplotlib figures from run outputs, next to the CSV they come from.

The history plot shows every metric column against the iteration index; VTK
field dumps become triangulation plots.  CSV stays the machine-readable
contract; these figures are the human-readable report.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np

from .mesh import read_vtk


def _read_history(path: Path):
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows)


def render_history(csv_path: Path, out_path: Path) -> Path:
    """One panel per metric column, cost and residual-like columns on log scale."""
    header, data = _read_history(csv_path)
    metrics = header[1:]
    iters = data[:, 0]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.4))
    if len(metrics) == 1:
        axes = [axes]
    for ax, name in zip(axes, metrics):
        col = data[:, header.index(name)]
        ax.plot(iters, col, "o-", ms=3, lw=1.2)
        positive = col > 0
        if positive.all() and col.max() / max(col.min(), 1e-300) > 50:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_field(vtk_path: Path, out_path: Path) -> Path:
    """Triangulation plot of every point field stored in a VTK dump."""
    mesh, data = read_vtk(vtk_path)
    if mesh is None:
        raise FileNotFoundError(f"no mesh found in {vtk_path}")
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    names = list(data) or [None]
    fig, axes = plt.subplots(1, len(names), figsize=(4.6 * len(names), 3.8))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        if name is None:
            ax.triplot(tri, lw=0.4, color="gray")
        else:
            values = data[name]
            if values.ndim == 2:  # vector field: show magnitude
                values = np.hypot(values[:, 0], values[:, 1])
            im = ax.tripcolor(tri, values, shading="gouraud")
            fig.colorbar(im, ax=ax, shrink=0.85)
            ax.triplot(tri, lw=0.15, color="k", alpha=0.25)
            ax.set_title(name)
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render(target: Path) -> list[Path]:
    """Render all figures for a run directory (or a single history.csv)."""
    target = Path(target)
    if target.is_file():
        run_dir = target.parent
        csv_paths = [target]
    elif target.is_dir():
        run_dir = target
        csv_paths = sorted(run_dir.glob("*.csv"))
    else:
        raise FileNotFoundError(f"no such file or directory: {target}")
    if not csv_paths and not list(run_dir.glob("*.vtk")):
        raise FileNotFoundError(f"nothing to report in {run_dir}")

    figures = []
    for csv_path in csv_paths:
        figures.append(render_history(csv_path, csv_path.with_suffix(".png")))
    # Numbered per-iteration series (like shape_000012.vtk) collapse to their
    # last snapshot; standalone dumps are all rendered.
    series: dict[str, Path] = {}
    singles = []
    for vtk_path in sorted(run_dir.glob("*.vtk")):
        head, _, tail = vtk_path.stem.rpartition("_")
        if head and tail.isdigit():
            series[head] = vtk_path
        else:
            singles.append(vtk_path)
    for vtk_path in singles + sorted(series.values()):
        figures.append(render_field(vtk_path, vtk_path.with_suffix(".png")))
    return figures
