"""Comparison figure of the four switch-on curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .stats import EvalReport  # noqa: E402

STYLE = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.5, 3.8),
    "savefig.dpi": 150,
}

SERIES = (
    ("target_p", "Performance target", "s"),
    ("augmented_p", "Augmented BPM", "^"),
    ("existing_p", "Existing BPM", "o"),
    ("ive_p", "Synthetic IVE", "D"),
)


def comparison_figure(report: EvalReport):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for attr, label, marker in SERIES:
            ax.plot(report.point_ids, getattr(report, attr), linestyle="none", marker=marker, markersize=3, label=label)
        ax.set_xlim(report.point_ids.min(), report.point_ids.max())
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("Work area illuminance (lux)")
        ax.set_ylabel("Probability of switching on")
        ax.set_title(report.experiment or None)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
    return fig


def save_comparison(report: EvalReport, path: str | Path, fmt: str | None = None) -> Path:
    """Render the figure to ``path``; the format defaults to the file suffix."""
    path = Path(path)
    fig = comparison_figure(report)
    try:
        # no timestamp or version string, so identical data gives identical bytes
        fig.savefig(path, format=fmt or path.suffix.lstrip(".") or "png", metadata={"Software": None})
    finally:
        plt.close(fig)
    return path
