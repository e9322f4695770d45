"""Signature clustering, significance detection and pathway mining for gridded ensembles."""

__version__ = "0.1.0"
