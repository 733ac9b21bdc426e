"""Batch figure rendering for the scheduler CLI's CSV outputs."""

from .csvio import Table, TableError, read_table
from .figures import KINDS, POLICY_LABELS, FigureSpec, RenderError, render

__version__ = "0.1.0"

__all__ = [
    "Table",
    "TableError",
    "read_table",
    "KINDS",
    "POLICY_LABELS",
    "FigureSpec",
    "RenderError",
    "render",
    "__version__",
]
