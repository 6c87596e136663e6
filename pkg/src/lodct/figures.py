"""Matplotlib report figures rendered to files next to the CSV output."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import DISPLAY_WINDOW_HU  # noqa: E402


def save_comparison_figure(images: dict, ground_truth: np.ndarray, path,
                           window=DISPLAY_WINDOW_HU, diff_max: float | None = None) -> None:
    """Reconstruction panels (windowed) over |difference| panels per method."""
    methods = list(images)
    n = len(methods)
    fig, axes = plt.subplots(2, max(n, 1), figsize=(3.0 * max(n, 1), 6.2), squeeze=False)
    lo, hi = window
    if diff_max is None:
        diff_max = max(np.abs(images[m] - ground_truth).max() for m in methods)
    for j, m in enumerate(methods):
        ax = axes[0][j]
        ax.imshow(images[m], cmap="gray", vmin=lo, vmax=hi)
        ax.set_title(m)
        ax.axis("off")
        ax = axes[1][j]
        im = ax.imshow(np.abs(images[m] - ground_truth), cmap="magma", vmin=0.0, vmax=diff_max)
        ax.set_title(f"|{m} - truth|")
        ax.axis("off")
    fig.colorbar(im, ax=axes[1], shrink=0.8, label="HU")
    fig.suptitle(f"display window [{lo:g}, {hi:g}] HU")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_cost_curves(history, path) -> None:
    """Total/data/regularizer cost of one solve versus outer iteration."""
    iters = [r.outer_iter for r in history]
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.semilogy(iters, [r.total_cost for r in history], "o-", label="total")
    ax.semilogy(iters, [r.data_term for r in history], "s--", label="data term")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("cost")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_learning_curve(objective_half_steps, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    steps = np.arange(len(objective_half_steps)) / 2.0
    ax.semilogy(steps, objective_half_steps, "-")
    ax.set_xlabel("alternation")
    ax.set_ylabel("learning objective")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_transform_atoms(transform, path) -> None:
    """Rows of the transform displayed as patches on a grid."""
    pr = transform.patch_rows or int(round(np.sqrt(transform.size)))
    pc = transform.patch_cols or pr
    side = int(np.ceil(np.sqrt(transform.size)))
    fig, axes = plt.subplots(side, side, figsize=(side, side))
    for idx in range(side * side):
        ax = axes.flat[idx]
        ax.axis("off")
        if idx < transform.size:
            atom = transform.matrix[idx].reshape(pr, pc, order="F")
            ax.imshow(atom, cmap="gray")
    fig.tight_layout(pad=0.1)
    fig.savefig(path, dpi=150)
    plt.close(fig)
