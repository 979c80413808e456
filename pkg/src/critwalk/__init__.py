"""Simple random walk on percolation clusters of Galton-Watson trees near criticality."""

from ._backend import NAME as BACKEND
from .analytics import OffspringLaw, named_law, percolate, profile

__all__ = ["BACKEND", "OffspringLaw", "named_law", "percolate", "profile"]
__version__ = "0.1.0"
