"""Uncertainty-aware partial dependence plots for Bayesian optimization runs.

The package fits a Gaussian-process surrogate to an optimization archive,
computes ICE/PDP curves with confidence bands from the posterior, and
partitions the complement space into sub-regions with more confident,
reliable estimates. A benchmark harness reproduces the synthetic studies at
desk scale.
"""

__version__ = "0.1.0"
