"""Latent-space Bayesian optimization with a structure-coupled GP kernel."""
__version__ = "0.1.0"
