"""Audit one-time-password generation for weak or predictable randomness."""

__version__ = "0.1.0"
