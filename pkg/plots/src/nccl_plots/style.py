"""Committed chart style.

Every figure goes through :func:`apply_style` so that two renders of the
same inputs produce byte-identical images and visual diffs stay
meaningful. Do not read user matplotlibrc state anywhere else.
"""

import matplotlib

matplotlib.use("Agg")

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "nccl-plots",
}

BAR_COLOR = "#4878cf"
BAR_COLORS = ["#4878cf", "#ee854a", "#6acc64", "#d65f5f", "#956cb4"]
DIAGONAL_COLOR = "#777777"


def apply_style():
    matplotlib.rcParams.update(STYLE)
