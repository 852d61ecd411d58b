"""Figures written next to the CSV outputs (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imageio import rgb_to_uint8  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def loss_curves(report, path: str | Path) -> Path:
    """Generator terms on the left, discriminator side on the right."""
    steps = report.column("step")
    with plt.rc_context(STYLE):
        fig, (ax_g, ax_d) = plt.subplots(1, 2, figsize=(10, 3.6))
        _draw_losses(ax_g, ax_d, report, steps)
        fig.tight_layout()
        fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def _draw_losses(ax_g, ax_d, report, steps):
    for name in ("l1_y", "l1_z", "l_adv"):
        vals = report.column(name)
        if name == "l1_z" and not np.any(vals):
            continue
        ax_g.plot(steps, vals, label=name, lw=1)
    ax_g.set_yscale("log")
    ax_g.set_xlabel("step")
    ax_g.legend()
    ax_g.set_title("generator terms")
    ax_d.plot(steps, report.column("l_d"), label="l_d", lw=1)
    ax_d.plot(steps, report.column("d_real"), label="d_real", lw=1)
    ax_d.plot(steps, report.column("d_fake"), label="d_fake", lw=1)
    ax_d.set_xlabel("step")
    ax_d.legend()
    ax_d.set_title("discriminator")


def sample_grid(x: np.ndarray, y_true: np.ndarray, y_pred: np.ndarray, z_pred: np.ndarray | None,
                path: str | Path, max_rows: int = 6) -> Path:
    """Rows of input / predicted mask / prediction / ground truth."""
    n = min(len(x), max_rows)
    cols = [("input", x), ("y_p", y_pred), ("y_g", y_true)]
    if z_pred is not None:
        cols.insert(1, ("z_p", z_pred))
    fig, axes = plt.subplots(n, len(cols), figsize=(2 * len(cols), 2 * n), squeeze=False)
    for r in range(n):
        for c, (title, arr) in enumerate(cols):
            ax = axes[r, c]
            if arr.shape[1] == 1:
                ax.imshow(arr[r, 0], cmap="gray", vmin=0, vmax=1)
            else:
                ax.imshow(rgb_to_uint8(arr[r]))
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
