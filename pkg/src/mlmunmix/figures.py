"""Headless figure rendering for the report paths of the CLI.

Every function writes one PNG next to the delimited artifacts it
illustrates.  Rendering is best-effort decoration of the CSV/PGM output,
never a data dependency.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_endmembers(path, curves: dict, wavelengths=None) -> Path:
    """Overlay endmember sets, one subplot per signature.

    ``curves`` maps a legend label to a B x R matrix; the first entry
    fixes the column count and ordering.
    """
    first = next(iter(curves.values()))
    r = first.shape[1]
    x = np.arange(first.shape[0]) if wavelengths is None else np.asarray(wavelengths)
    cols = min(r, 2)
    rows = (r + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(5.5 * cols, 3.2 * rows), squeeze=False)
    for k in range(r):
        ax = axes[k // cols][k % cols]
        for label, E in curves.items():
            if E.shape[1] > k:
                ax.plot(x, E[:, k], label=label, linewidth=1.2)
        ax.set_title(f"endmember {k + 1}")
        ax.set_xlabel("band" if wavelengths is None else "wavelength (nm)")
        ax.set_ylabel("reflectance")
        ax.legend(fontsize=8)
    for k in range(r, rows * cols):
        axes[k // cols][k % cols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_abundance_grid(path, abundance: np.ndarray, title: str = "") -> Path:
    r = abundance.shape[2]
    fig, axes = plt.subplots(1, r, figsize=(3.0 * r, 3.2), squeeze=False)
    for k in range(r):
        ax = axes[0][k]
        im = ax.imshow(abundance[:, :, k], vmin=0, vmax=1, cmap="viridis")
        ax.set_title(f"endmember {k + 1}", fontsize=9)
        ax.axis("off")
    fig.colorbar(im, ax=axes[0].tolist(), fraction=0.025)
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_pmap(path, p: np.ndarray, title: str = "transition probability") -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(p, vmin=0, vmax=1, cmap="magma")
    ax.set_title(title)
    ax.axis("off")
    fig.colorbar(im, ax=ax, fraction=0.04)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_phist(path, p: np.ndarray, bins: int = 100) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.hist(np.asarray(p).ravel(), bins=bins)
    ax.set_xlabel("transition probability")
    ax.set_ylabel("pixels")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss(path, history) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.plot(np.arange(1, len(history) + 1), history)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean spectral angle")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_sweep(path, axis_name: str, candidates, metric_rows: dict) -> Path:
    """One curve per metric against the sweep candidates."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for name, values in metric_rows.items():
        ax.plot(candidates, values, marker="o", label=name)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("metric value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
