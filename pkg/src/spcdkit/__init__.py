"""Superpixel colour descriptors and classical classifiers for wound patches."""

__version__ = "0.1.0"
