"""Figure regeneration for ratiopath experiment outputs."""

from ratiopath_figures.render import FigureJob, SchemaError, render, FIGURE_KINDS

__all__ = ["FigureJob", "SchemaError", "render", "FIGURE_KINDS"]
