"""Federated learning with noisy labels and class-imbalanced clients."""

__version__ = "0.1.0"
