"""
Model-based clustering of functional data with outlier trimming.
"""
from .provenance import __version__  # noqa F401
