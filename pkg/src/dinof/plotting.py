"""Figure output for the command front-end.

Figures are written as SVG with a pinned hash salt and no date metadata so
that identical data always produce identical bytes.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.linewidth": 0.8,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "dinof",
    "svg.fonttype": "path",
    "path.simplify": False,
}

SCATTER_SIZE = (4.0, 4.0)
SWEEP_SIZE = (6.5, 2.8)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def scatter(samples: np.ndarray, path, plot_range: float = 6.0, title: str | None = None,
            reference: np.ndarray | None = None) -> Path:
    """2-D scatter on the fixed square viewport ``[-plot_range, plot_range]^2``."""
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError(f"scatter needs [n, 2] samples, got {samples.shape}")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=SCATTER_SIZE)
        if reference is not None:
            ax.scatter(reference[:, 0], reference[:, 1], s=1.5, c="0.75", linewidths=0, label="reference")
        ax.scatter(samples[:, 0], samples[:, 1], s=1.5, c="C0", linewidths=0, label="samples")
        ax.set_xlim(-plot_range, plot_range)
        ax.set_ylim(-plot_range, plot_range)
        ax.set_aspect("equal")
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        if title:
            ax.set_title(title)
        if reference is not None:
            ax.legend(loc="upper right", markerscale=6, frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def sweep(rows, path) -> Path:
    """Energy distance and MMD against the cut time (timings are left out so the
    figure stays reproducible)."""
    tm = np.array([r.tm for r in rows])
    order = np.argsort(tm, kind="stable")
    tm = tm[order]
    ed = np.array([r.energy_distance for r in rows])[order]
    mmd = np.array([r.mmd for r in rows])[order]
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=SWEEP_SIZE)
        ax0.plot(tm, ed, "o-", color="C0")
        ax0.set_yscale("log")
        ax0.set_xlabel("cut time $T_m$")
        ax0.set_ylabel("energy distance")
        ax1.plot(tm, mmd, "s-", color="C1")
        ax1.set_xlabel("cut time $T_m$")
        ax1.set_ylabel("MMD$^2$ (RBF)")
        fig.tight_layout()
        return _save(fig, path)


def loss_curves(iters, score_loss, flow_nll, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=SWEEP_SIZE)
        ax0.plot(iters, score_loss, color="C0")
        ax0.set_xlabel("iteration")
        ax0.set_ylabel("score-matching loss")
        ax1.plot(iters, flow_nll, color="C2")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("flow NLL")
        fig.tight_layout()
        return _save(fig, path)
