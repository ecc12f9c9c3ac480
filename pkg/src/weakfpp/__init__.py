"""Weak-disorder first-passage percolation on the complete graph.

Edge weights are ``E**s`` with ``E ~ Exp(1)``. The package holds an exact
event-driven simulator of the two-source flow race, the associated
continuous-time branching process, samplers and solvers for the limit
objects, and the statistics used to check them against each other.
"""
from .limits import Disorder, LimitConstants, malthusian

__all__ = ["Disorder", "LimitConstants", "malthusian"]
__version__ = "0.1.0"
