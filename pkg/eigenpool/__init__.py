"""Bayesian pooled estimation of covariance eigenstructure across groups."""

__version__ = "1.0.0"
