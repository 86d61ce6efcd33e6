"""Activation detection in p-value maps with a constrained beta mixture
and a spatial Gaussian factor."""

__version__ = "0.1.0"
