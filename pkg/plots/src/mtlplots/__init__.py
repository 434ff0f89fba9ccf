"""Static figure rendering for teacher-student dynamics CSV outputs."""

from .figspec import FigureSpec, FigureSpecError
from .render import render, render_grid, render_overlay, render_summary_panel

__version__ = "0.1.0"
