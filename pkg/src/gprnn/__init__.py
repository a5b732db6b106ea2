"""Latent dynamics discovery with GP-RNN models."""

__version__ = "0.1.0"
