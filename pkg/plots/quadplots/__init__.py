"""Batch figure rendering for quadcascade run directories.

Reads only the CSV artifacts (states.csv, reference.csv); no link to the
controller stack.
"""

from .figures import PlotJob, render

__version__ = "0.1.0"
