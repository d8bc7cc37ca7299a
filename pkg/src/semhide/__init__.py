"""Latent-level covert video transmission over a simulated noisy channel."""

__version__ = "0.1.0"
