"""Weakly self-avoiding walk with contact self-attraction: simulation and verification."""
__version__ = "0.1.0"
