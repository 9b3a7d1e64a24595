"""Figures from the simulator's CSV exports (read-only consumer)."""

from .csvio import SchemaMismatch, read_csv
from .figures import KINDS, FigureRequest, render

__all__ = ["FigureRequest", "KINDS", "SchemaMismatch", "read_csv", "render"]
