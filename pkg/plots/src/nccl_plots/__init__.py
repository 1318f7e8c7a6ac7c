"""Chart rendering for nccl-lab run artifacts."""

from .render import (comparison_figure, load_comparison, load_reliability,
                     reliability_figure, render_comparison,
                     render_reliability)

__all__ = ["comparison_figure", "load_comparison", "load_reliability",
           "reliability_figure", "render_comparison", "render_reliability"]

__version__ = "0.1.0"
