"""Numerical laboratory for Kähler-Ricci flow on symmetric model manifolds."""

__version__ = "0.1.0"
