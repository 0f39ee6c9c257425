"""Estimation of integral operators from scattered, noisy impulse responses."""

__version__ = "0.1.0"
