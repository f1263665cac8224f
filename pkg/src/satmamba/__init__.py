"""Masked-autoencoder pretraining on multi-directional selective
state-space scans, with analytic cost models and a desk-scale harness."""

__version__ = "0.1.0"
