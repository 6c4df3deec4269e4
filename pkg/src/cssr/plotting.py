"""Report figures: training loss curves and RGB intensity histograms.

Figures are always written to files; the Agg backend is selected so nothing
needs a display.
"""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_CHANNEL_COLORS = ("tab:red", "tab:green", "tab:blue")


def plot_losses(rows: Sequence[Sequence[float]], path: str | os.PathLike) -> None:
    """Loss curves from loss-log rows (iter, L_D, L_G, L_SR, lr); log scale on the y axis."""
    arr = np.asarray(rows, dtype=np.float64)
    fig, (ax_loss, ax_lr) = plt.subplots(2, 1, figsize=(6.4, 5.2), sharex=True,
                                         gridspec_kw={"height_ratios": (3, 1)})
    it = arr[:, 0]
    for col, label in ((1, "L_D"), (2, "L_G"), (3, "L_SR")):
        values = arr[:, col]
        if np.any(values > 0):
            ax_loss.plot(it, values, lw=1.0, label=label)
    ax_loss.set_yscale("log")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False)
    ax_lr.plot(it, arr[:, 4], color="k", lw=1.0)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_histograms(hists: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    """One panel per image set, each showing the three (256,) channel counts."""
    fig, axes = plt.subplots(len(hists), 1, figsize=(6.4, 2.4 * len(hists)), sharex=True, squeeze=False)
    levels = np.arange(256)
    for ax, (title, hist) in zip(axes[:, 0], hists.items()):
        for c, color in enumerate(_CHANNEL_COLORS):
            ax.step(levels, hist[c], where="mid", color=color, lw=0.9, label="RGB"[c])
        ax.set_title(title, fontsize=9)
        ax.set_ylabel("count")
    axes[0, 0].legend(frameon=False, ncol=3, fontsize=8)
    axes[-1, 0].set_xlabel("intensity")
    axes[-1, 0].set_xlim(0, 255)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
