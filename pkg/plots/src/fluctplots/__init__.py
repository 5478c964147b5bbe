"""Figure rendering for lab CSV artifacts."""

from .csvdata import DataError, Table, load
from .render import KINDS, FigureSpec, render

__all__ = ["DataError", "Table", "load", "KINDS", "FigureSpec", "render"]
__version__ = "0.1.0"
