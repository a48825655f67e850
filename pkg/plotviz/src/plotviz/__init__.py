"""Figures from strong-field run outputs: populations vs time, yields vs intensity."""

__version__ = "0.1.0"

from .io import SchemaError, TraceFile, YieldSeries, read_trace, read_yields
from .plots import plot_populations, plot_yields, pretty_label

__all__ = [
    "SchemaError",
    "TraceFile",
    "YieldSeries",
    "read_trace",
    "read_yields",
    "plot_populations",
    "plot_yields",
    "pretty_label",
    "__version__",
]
