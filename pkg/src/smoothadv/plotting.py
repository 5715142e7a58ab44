"""SVG figures for attack results and adversarial bands.

Figures are built with the object-oriented matplotlib API (no pyplot state)
and written as SVG with a fixed hash salt and no timestamp, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

RC = {
    "svg.hashsalt": "smoothadv",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 0.9,
}

SIGNAL_COLOR = "#1f3b73"
PERTURBATION_COLOR = "#b2182b"
BAND_COLOR = "#f4a582"


def _pred_text(pred) -> str:
    label, conf = pred
    return f"{label.value} ({100.0 * conf:.1f}%)"


def _padded_limits(lo: float, hi: float) -> tuple[float, float]:
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    return lo - pad, hi + pad


def attack_figure(result) -> Figure:
    """Original, perturbation and adversarial signal stacked vertically.

    The perturbation panel spans the same number of voltage units as the
    signal panels (centered on 0), so its size reads directly against the
    tracing.
    """
    with mpl.rc_context(RC):
        fig = Figure(figsize=(8, 5.5))
        axes = fig.subplots(3, 1, sharex=True)
        t = np.arange(len(result.original))
        lo = float(min(result.original.min(), result.adversarial.min()))
        hi = float(max(result.original.max(), result.adversarial.max()))
        ylim = _padded_limits(lo, hi)
        half = (ylim[1] - ylim[0]) / 2.0

        axes[0].plot(t, result.original, color=SIGNAL_COLOR)
        axes[0].set_title(f"original  [{result.id}]  true {result.label.value}, predicted {_pred_text(result.pred_before)}")
        axes[0].set_ylim(*ylim)

        axes[1].plot(t, result.perturbation, color=PERTURBATION_COLOR)
        axes[1].set_title(f"perturbation ({result.method}, max |.| = {result.linf_norm:.3g})")
        axes[1].set_ylim(-half, half)

        axes[2].plot(t, result.adversarial, color=SIGNAL_COLOR)
        axes[2].set_title(f"adversarial  predicted {_pred_text(result.pred_after)}")
        axes[2].set_ylim(*ylim)
        axes[2].set_xlabel("sample")
        for ax in axes:
            ax.set_ylabel("amplitude")
        fig.align_ylabels(axes)
        fig.tight_layout()
    return fig


def band_figure(original, band, adversarial=None, title: str = "") -> Figure:
    """Min/max envelope of a population of adversarial variants with the original on top."""
    with mpl.rc_context(RC):
        fig = Figure(figsize=(8, 3.2))
        ax = fig.subplots()
        t = np.arange(len(band.lower))
        ax.fill_between(t, band.lower, band.upper, color=BAND_COLOR, linewidth=0, label=f"band ({band.n} samples)")
        if adversarial is not None:
            ax.plot(t, adversarial, color=PERTURBATION_COLOR, linewidth=0.6, label="adversarial")
        ax.plot(t, original, color=SIGNAL_COLOR, linewidth=0.8, label="original")
        ax.set_xlabel("sample")
        ax.set_ylabel("amplitude")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", frameon=False, fontsize=7)
        fig.tight_layout()
    return fig


def save_svg(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with mpl.rc_context(RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
