"""Static figures for CLI reports (rendered off-screen)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import VectorGridField  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_field(field: VectorGridField, path, title: str = "", labels=None, reference=None) -> Path:
    """Components of a 1-D field as curves (2-D: one image per component)."""
    g = field.grid
    labels = labels or [f"u{i + 1}" for i in range(field.m)]
    if g.dim == 1:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        x = g.axis()
        for i in range(field.m):
            ax.plot(x, field.values[i], label=labels[i])
        if reference is not None:
            ax.plot(x, np.asarray(reference), "k--", lw=1, label="reference")
        ax.set_xlabel("x")
        ax.legend(loc="best", fontsize=8)
    else:
        fig, axes = plt.subplots(1, field.m, figsize=(4 * field.m, 3.5), squeeze=False)
        for i, ax in enumerate(axes[0]):
            im = ax.imshow(field.values[i].T, origin="lower", extent=(0, g.period, 0, g.period))
            ax.set_title(labels[i])
            fig.colorbar(im, ax=ax)
    fig.suptitle(title or f"t = {field.t:g}")
    return _save(fig, path)


def plot_series(rows: list[dict], xkey: str, ykeys, path, title: str = "", logy: bool = False,
                logx: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.array([r[xkey] for r in rows], dtype=float)
    for k in ykeys:
        y = np.array([r[k] for r in rows], dtype=float)
        if logy:
            y = np.abs(y)
        ax.plot(x, y, label=k)
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xkey)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_functionals(times, traces: dict, path, title: str = "") -> Path:
    """Functional values over time, one curve per (functional, A-cell)."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, values in traces.items():
        values = np.asarray(values)
        for k in range(values.shape[1]):
            ax.plot(times, values[:, k], label=f"{name}[{k}]" if values.shape[1] > 1 else name)
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)
