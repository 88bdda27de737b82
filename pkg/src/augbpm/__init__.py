"""Augmented building performance models from probit curves, IVE data and a conditional GAN."""

__version__ = "0.1.0"
