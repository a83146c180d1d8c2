"""Hierarchical Q-learning for stabilizing point-mutation design on protein contact graphs."""

__version__ = "0.1.0"
