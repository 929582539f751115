"""Finite-state isomorphism theorems: local times, Gaussian squares and loop soups."""

__version__ = "0.1.0"
