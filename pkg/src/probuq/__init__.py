"""Gaussian-process surrogates, active learning and sampling-based UQ."""

__version__ = "0.1.0"
