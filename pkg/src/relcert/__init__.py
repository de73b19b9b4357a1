"""Relational certification of shared-perturbation properties over ReLU networks."""

__version__ = "0.1.0"
