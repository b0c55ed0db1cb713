"""Raster figures and CSV cross-sections for run outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import DomainSpec, GridSpec  # noqa: E402

plt.rcParams.update({"figure.dpi": 110, "font.size": 9, "axes.titlesize": 9,
                     "savefig.bbox": "tight"})


def _outline(ax, domain: DomainSpec):
    for name, style in (("omega", "k-"), ("omega1", "k--"), ("omega2", "k:")):
        x0, x1, y0, y1 = domain.box(name)
        ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], style, lw=0.8)


def field_slice(path: str | Path, v: np.ndarray, grid: GridSpec, title: str = "",
                domain: DomainSpec | None = None) -> Path:
    """Speed colour map with a sparse quiver overlay for one vector slice (2, ny, nx)."""
    X, Y = grid.mesh()
    fig, ax = plt.subplots(figsize=(6, 3))
    sp = np.hypot(v[0], v[1])
    im = ax.pcolormesh(X, Y, sp, shading="auto", cmap="viridis")
    s = max(1, min(v.shape[1:]) // 12)
    ax.quiver(X[::s, ::s], Y[::s, ::s], v[0, ::s, ::s], v[1, ::s, ::s], color="w", width=0.002)
    if domain is not None:
        _outline(ax, domain)
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8, label="|v|")
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def scalar_slice(path: str | Path, f: np.ndarray, grid: GridSpec, title: str = "") -> Path:
    X, Y = grid.mesh()
    fig, ax = plt.subplots(figsize=(6, 3))
    lim = float(np.max(np.abs(f))) or 1.0
    im = ax.pcolormesh(X, Y, f, shading="auto", cmap="RdBu_r", vmin=-lim, vmax=lim)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def series(path: str | Path, x: np.ndarray, ys: dict, xlabel: str, ylabel: str,
           logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for name, y in ys.items():
        ax.plot(x, y, label=name, marker="o" if len(x) < 40 else None, ms=3)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def trajectories(path: str | Path, paths: np.ndarray, domain: DomainSpec, title: str = "") -> Path:
    """Particle paths, shape (n_times, n_particles, 2)."""
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(paths[:, :, 0], paths[:, :, 1], lw=0.6)
    ax.plot(paths[0, :, 0], paths[0, :, 1], "k.", ms=2)
    _outline(ax, domain)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def cross_section(path: str | Path, v: np.ndarray, grid: GridSpec, row: int | None = None) -> Path:
    """Both components of a vector slice along the x2 mid-row."""
    row = v.shape[1] // 2 if row is None else row
    return write_csv(path, ["x1", "v1", "v2"], zip(grid.x, v[0, row], v[1, row]))
