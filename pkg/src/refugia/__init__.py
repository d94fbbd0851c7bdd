"""Predator-prey steady states, continuation and dynamics with a prey refuge."""

__version__ = "0.1.0"
