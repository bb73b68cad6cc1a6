"""Margin-constrained quadratic pruning of tree ensembles."""
__version__ = "0.1.0"
