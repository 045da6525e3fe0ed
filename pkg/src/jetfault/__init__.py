"""Fault-tolerant momentum control for jet-powered humanoid robots."""

__version__ = "0.1.0"
