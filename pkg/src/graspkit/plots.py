"""Report figures: the ratio-accuracy line chart and per-scene map panels."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .geometry import GraspMaps, rect_from_grasp


def save_sweep_plot(rows, path) -> None:
    """Line chart of accuracy against labelled ratio."""
    ratios = [r.ratio for r in rows]
    accs = [r.accuracy for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ratios, accs, marker="o")
    ax.set_xlabel("labelled ratio")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 102)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_maps_panel(image: np.ndarray, maps: GraspMaps, path, grasp=None) -> None:
    """Four panels: input (with the selected grasp), quality, angle, width."""
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    axes[0].imshow(image)
    axes[0].set_title("input")
    if grasp is not None and not grasp.no_grasp:
        rect = rect_from_grasp(grasp)
        pts = np.vstack([rect.vertices, rect.vertices[:1]])
        axes[0].plot(pts[:, 0], pts[:, 1], "r-", linewidth=1.5)
    im1 = axes[1].imshow(maps.Q, cmap="viridis", vmin=0, vmax=1)
    axes[1].set_title("quality")
    fig.colorbar(im1, ax=axes[1], fraction=0.046)
    im2 = axes[2].imshow(maps.phi(), cmap="hsv", vmin=-math.pi / 2, vmax=math.pi / 2)
    axes[2].set_title("angle")
    fig.colorbar(im2, ax=axes[2], fraction=0.046)
    im3 = axes[3].imshow(maps.W, cmap="magma")
    axes[3].set_title("width (px)")
    fig.colorbar(im3, ax=axes[3], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
